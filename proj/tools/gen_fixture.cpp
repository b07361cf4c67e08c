// Writes synthetic feature banks used by the tests and examples.
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "knnfuse/error.hpp"
#include "knnfuse/featurestore.hpp"
#include "knnfuse/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate synthetic feature banks", "knnfuse_gen"};
    std::string kind = "xor";
    std::string out_dir;
    std::uint64_t seed = 0;
    std::size_t n = 300;
    double sigma = 0.3;
    std::string format = "bin";
    app.add_option("--kind", kind, "xor | blobs")->check(CLI::IsMember({"xor", "blobs"}));
    app.add_option("--out-dir", out_dir, "Output directory")->required();
    app.add_option("--seed", seed, "Seed");
    app.add_option("--n", n, "Sample count for blobs");
    app.add_option("--sigma", sigma, "Standard deviation for blobs");
    app.add_option("--format", format, "bin | csv")->check(CLI::IsMember({"bin", "csv"}));
    CLI11_PARSE(app, argc, argv);

    namespace fs = std::filesystem;
    using namespace knnfuse;
    try {
        fs::create_directories(out_dir);
        const BankFormat fmt = parse_bank_format(format);
        const std::string ext = format == "bin" ? ".fbnk" : ".csv";
        const fs::path dir(out_dir);
        if (kind == "xor") {
            const auto fx = xor_fixture(seed);
            write_bank(fx.train, dir / ("xor_train" + ext), fmt);
            write_bank(fx.val, dir / ("xor_val" + ext), fmt);
            write_bank(fx.test, dir / ("xor_test" + ext), fmt);
        } else {
            write_bank(separable_blobs(n, sigma, seed, "blob"), dir / ("blobs" + ext), fmt);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

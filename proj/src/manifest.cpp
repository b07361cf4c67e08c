#include "knnfuse/manifest.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <memory>

#include <openssl/evp.h>

#include "knnfuse/error.hpp"
#include "knnfuse/evalreport.hpp"

namespace knnfuse {

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());

    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorCode::IoFailure, "sha256 init failed");
    }
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &len);

    std::string hex;
    char byte[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", digest[i]);
        hex += byte;
    }
    return hex;
}

nlohmann::json make_manifest(const std::string& command, const nlohmann::json& config,
                             const nlohmann::json& seeds, const std::vector<std::filesystem::path>& inputs,
                             const std::vector<std::filesystem::path>& outputs) {
    nlohmann::json m;
    m["tool"] = "knnfuse";
    m["version"] = kToolkitVersion;
    m["command"] = command;
    m["config"] = config;
    m["seeds"] = seeds;
    nlohmann::json in = nlohmann::json::array();
    for (const auto& p : inputs) {
        in.push_back({{"path", p.string()}, {"bytes", std::filesystem::file_size(p)}, {"sha256", sha256_file(p)}});
    }
    m["inputs"] = std::move(in);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : outputs) out.push_back(p.string());
    m["outputs"] = std::move(out);
    return m;
}

std::filesystem::path manifest_path(const std::filesystem::path& output) {
    return std::filesystem::path(output.string() + ".manifest.json");
}

void write_manifest(const std::filesystem::path& output, const nlohmann::json& manifest) {
    write_text_file(manifest_path(output), manifest.dump(2) + "\n");
}

}  // namespace knnfuse

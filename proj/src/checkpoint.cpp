#include "knnfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "knnfuse/error.hpp"

namespace knnfuse {

namespace {

constexpr char kMagic[4] = {'K', 'N', 'F', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>(value & 0xff));
        value = static_cast<T>(value >> 8);
    }
}

template <typename T>
T get_le(const std::string& bytes, std::size_t& pos) {
    if (pos + sizeof(T) > bytes.size()) throw Error(ErrorCode::MalformedHeader, "truncated checkpoint");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += sizeof(T);
    return v;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const Model& m = ckpt.model;
    nlohmann::json header;
    header["format"] = "knnfuse-checkpoint";
    header["dims"] = {{"input", m.input_dim()}, {"classes", m.class_count()}, {"hidden", m.hidden()}};
    header["config"] = ckpt.config;
    header["seed"] = ckpt.seed;
    header["preprocess"] = {{"recipe", to_string(ckpt.preprocess.recipe)}, {"mean", ckpt.preprocess.mean}};
    header["parameter_count"] = m.parameter_count();
    const std::string text = header.dump();

    std::string out(kMagic, 4);
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint64_t>(out, text.size());
    out += text;
    auto put_values = [&](const std::vector<double>& values) {
        for (double v : values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    };
    for (const auto& layer : m.layers) {
        put_values(layer.weights);
        put_values(layer.bias);
    }

    if (path.empty()) throw Error(ErrorCode::IoFailure, "empty checkpoint path");
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>()};

    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw Error(ErrorCode::MalformedHeader, "not a knnfuse checkpoint: " + path.string());
    }
    std::size_t pos = 4;
    if (get_le<std::uint32_t>(bytes, pos) != kVersion) {
        throw Error(ErrorCode::MalformedHeader, "unsupported checkpoint version");
    }
    const auto header_len = get_le<std::uint64_t>(bytes, pos);
    if (pos + header_len > bytes.size()) throw Error(ErrorCode::MalformedHeader, "header overruns file");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(pos, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedHeader, std::string("checkpoint header: ") + e.what());
    }
    pos += header_len;

    Checkpoint ckpt;
    try {
        const auto dim = header.at("dims").at("input").get<std::size_t>();
        const auto classes = header.at("dims").at("classes").get<std::uint32_t>();
        const auto hidden = header.at("dims").at("hidden").get<std::vector<std::size_t>>();
        ckpt.model = init_model(dim, classes, hidden, 0);
        ckpt.config = header.at("config");
        ckpt.seed = header.at("seed").get<std::uint64_t>();
        ckpt.preprocess.recipe = parse_recipe(header.at("preprocess").at("recipe").get<std::string>());
        ckpt.preprocess.mean = header.at("preprocess").at("mean").get<std::vector<double>>();
        if (header.at("parameter_count").get<std::size_t>() != ckpt.model.parameter_count()) {
            throw Error(ErrorCode::MalformedHeader, "parameter count disagrees with dims");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedHeader, std::string("checkpoint header: ") + e.what());
    }

    if (bytes.size() - pos != ckpt.model.parameter_count() * 4) {
        throw Error(ErrorCode::DimensionMismatch, "parameter block size does not match header");
    }
    auto get_values = [&](std::vector<double>& values) {
        for (auto& v : values) v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos));
    };
    for (auto& layer : ckpt.model.layers) {
        get_values(layer.weights);
        get_values(layer.bias);
    }
    return ckpt;
}

}  // namespace knnfuse

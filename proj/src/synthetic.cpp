#include "knnfuse/synthetic.hpp"

#include <cmath>
#include <numbers>

#include "knnfuse/error.hpp"
#include "knnfuse/rng.hpp"

namespace knnfuse {

FeatureBank gaussian_blobs(std::size_t n, std::span<const std::array<double, 2>> centers,
                           std::span<const std::uint32_t> labels, std::uint32_t class_count,
                           double sigma, std::uint64_t seed, const std::string& id_prefix) {
    if (centers.empty() || centers.size() != labels.size()) {
        throw Error(ErrorCode::InvalidArgument, "need one label per blob center");
    }
    Rng rng(seed);
    std::vector<float> features;
    features.reserve(2 * n);
    std::vector<std::uint32_t> out_labels;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& c = centers[i % centers.size()];
        features.push_back(static_cast<float>(c[0] + sigma * rng.normal()));
        features.push_back(static_cast<float>(c[1] + sigma * rng.normal()));
        out_labels.push_back(labels[i % labels.size()]);
        ids.push_back(id_prefix + std::to_string(i));
    }
    return FeatureBank(std::move(features), 2, std::move(out_labels), class_count, std::move(ids));
}

FeatureBank xor_blobs(std::size_t n, double sigma, std::uint64_t seed, const std::string& id_prefix) {
    const std::array<std::array<double, 2>, 4> centers = {{{1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};
    const std::array<std::uint32_t, 4> labels = {0, 1, 0, 1};
    return gaussian_blobs(n, centers, labels, 2, sigma, seed, id_prefix);
}

FeatureBank separable_blobs(std::size_t n, double sigma, std::uint64_t seed, const std::string& id_prefix) {
    std::array<std::array<double, 2>, 3> centers{};
    const double radius = 4.0;
    for (std::size_t c = 0; c < 3; ++c) {
        const double angle = (90.0 + 120.0 * static_cast<double>(c)) * std::numbers::pi / 180.0;
        centers[c] = {radius * std::cos(angle), radius * std::sin(angle)};
    }
    const std::array<std::uint32_t, 3> labels = {0, 1, 2};
    return gaussian_blobs(n, centers, labels, 3, sigma, seed, id_prefix);
}

XorFixture xor_fixture(std::uint64_t seed) {
    constexpr double sigma = 0.3;
    return XorFixture{xor_blobs(400, sigma, derive_seed(seed, "xor-train"), "train-"),
                      xor_blobs(100, sigma, derive_seed(seed, "xor-val"), "val-"),
                      xor_blobs(400, sigma, derive_seed(seed, "xor-test"), "test-")};
}

}  // namespace knnfuse

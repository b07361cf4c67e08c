#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knnfuse/featurestore.hpp"

namespace knnfuse {

/// Isotropic Gaussian blobs in 2-D: sample i is drawn around centers[i % m]
/// with standard deviation sigma and labelled labels[i % m].
FeatureBank gaussian_blobs(std::size_t n, std::span<const std::array<double, 2>> centers,
                           std::span<const std::uint32_t> labels, std::uint32_t class_count,
                           double sigma, std::uint64_t seed, const std::string& id_prefix);

/// Four blobs at (+-1, +-1); label 1 when the center's coordinates differ in sign.
FeatureBank xor_blobs(std::size_t n, double sigma, std::uint64_t seed, const std::string& id_prefix);

/// Three well-separated blobs (one per class) at angles 90, 210 and 330 degrees, radius 4.
FeatureBank separable_blobs(std::size_t n, double sigma, std::uint64_t seed, const std::string& id_prefix);

struct XorFixture {
    FeatureBank train;
    FeatureBank val;
    FeatureBank test;
};

/// sigma = 0.3, sizes 400 / 100 / 400, per-split seeds derived from `seed`.
XorFixture xor_fixture(std::uint64_t seed = 0);

}  // namespace knnfuse

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace knnfuse {

/// Length-C probability vector: nonnegative entries summing to 1.
using ProbDist = std::vector<double>;

/// Index of the largest entry; ties go to the lowest class index.
std::uint32_t argmax(std::span<const double> dist);

/// True when every entry is finite and >= 0 and the sum is within `tol` of 1.
bool is_distribution(std::span<const double> dist, double tol = 1e-9);

}  // namespace knnfuse

#include "knnfuse/probdist.hpp"

#include <cmath>

namespace knnfuse {

std::uint32_t argmax(std::span<const double> dist) {
    std::uint32_t best = 0;
    for (std::uint32_t c = 1; c < dist.size(); ++c) {
        if (dist[c] > dist[best]) best = c;
    }
    return best;
}

bool is_distribution(std::span<const double> dist, double tol) {
    if (dist.empty()) return false;
    double sum = 0.0;
    for (double p : dist) {
        if (!std::isfinite(p) || p < 0.0) return false;
        sum += p;
    }
    return std::abs(sum - 1.0) <= tol;
}

}  // namespace knnfuse

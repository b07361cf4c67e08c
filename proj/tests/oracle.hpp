#pragma once

// Reference implementations used only by the tests: straightforward, slow,
// and written without reusing any library kernel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "knnfuse/featurestore.hpp"
#include "knnfuse/knn.hpp"
#include "knnfuse/rng.hpp"

namespace oracle {

inline double sq_euclidean(std::span<const float> q, std::span<const float> x) {
    long double s = 0.0L;
    for (std::size_t j = 0; j < q.size(); ++j) {
        const long double d = static_cast<long double>(q[j]) - static_cast<long double>(x[j]);
        s += d * d;
    }
    return static_cast<double>(s);
}

inline double cosine(std::span<const float> q, std::span<const float> x) {
    long double qq = 0.0L, xx = 0.0L, qx = 0.0L;
    for (std::size_t j = 0; j < q.size(); ++j) {
        qq += static_cast<long double>(q[j]) * q[j];
        xx += static_cast<long double>(x[j]) * x[j];
        qx += static_cast<long double>(q[j]) * x[j];
    }
    return static_cast<double>(1.0L - qx / std::sqrt(qq * xx));
}

struct Neighbors {
    std::vector<std::size_t> indices;
    std::vector<double> distances;
    std::vector<std::uint32_t> labels;
};

// Full distance row, then a stable sort by distance (index order breaks ties).
inline Neighbors topk(std::span<const float> q, const knnfuse::FeatureBank& bank, std::size_t k,
                      knnfuse::Metric metric, std::optional<std::size_t> exclude = std::nullopt) {
    std::vector<double> d(bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i) {
        d[i] = metric == knnfuse::Metric::SqEuclidean ? sq_euclidean(q, bank.row(i)) : cosine(q, bank.row(i));
    }
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < bank.size(); ++i) {
        if (!exclude || *exclude != i) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
    Neighbors out;
    for (std::size_t t = 0; t < k && t < order.size(); ++t) {
        out.indices.push_back(order[t]);
        out.distances.push_back(d[order[t]]);
        out.labels.push_back(bank.label(order[t]));
    }
    return out;
}

// Direct evaluation of the weighted vote in long double.
inline std::vector<double> posterior(const std::vector<double>& distances, const std::vector<std::uint32_t>& labels,
                                     double tau, std::uint32_t classes) {
    const long double dmin = *std::min_element(distances.begin(), distances.end());
    std::vector<long double> w(classes, 0.0L);
    long double z = 0.0L;
    for (std::size_t t = 0; t < distances.size(); ++t) {
        const long double e = std::exp(-(static_cast<long double>(distances[t]) - dmin) / tau);
        w[labels[t]] += e;
        z += e;
    }
    std::vector<double> p(classes);
    for (std::uint32_t c = 0; c < classes; ++c) p[c] = static_cast<double>(w[c] / z);
    return p;
}

}  // namespace oracle

namespace testutil {

inline std::vector<std::string> make_ids(std::size_t n, const std::string& prefix = "s") {
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = prefix + std::to_string(i);
    return ids;
}

// Random bank; `integer_grid` draws small integers so exact distance ties are common,
// and a fraction of rows are copies of earlier rows.
inline knnfuse::FeatureBank random_bank(knnfuse::Rng& rng, std::size_t n, std::size_t dim, std::uint32_t classes,
                                        bool integer_grid = false, double duplicate_rate = 0.0) {
    std::vector<float> f(n * dim);
    std::vector<std::uint32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && rng.uniform() < duplicate_rate) {
            const std::size_t src = static_cast<std::size_t>(rng.below(i));
            std::copy_n(f.begin() + static_cast<std::ptrdiff_t>(src * dim), dim,
                        f.begin() + static_cast<std::ptrdiff_t>(i * dim));
        } else {
            for (std::size_t j = 0; j < dim; ++j) {
                f[i * dim + j] = integer_grid ? static_cast<float>(static_cast<int>(rng.below(5)) - 2)
                                              : static_cast<float>(rng.normal());
            }
        }
        labels[i] = static_cast<std::uint32_t>(rng.below(classes));
    }
    return knnfuse::FeatureBank(std::move(f), dim, std::move(labels), classes, make_ids(n));
}

inline knnfuse::FeatureBank bank_from(std::vector<std::vector<float>> rows, std::vector<std::uint32_t> labels,
                                      std::uint32_t classes) {
    const std::size_t dim = rows.front().size();
    std::vector<float> f;
    for (const auto& r : rows) f.insert(f.end(), r.begin(), r.end());
    const std::size_t n = labels.size();
    return knnfuse::FeatureBank(std::move(f), dim, std::move(labels), classes, make_ids(n));
}

}  // namespace testutil

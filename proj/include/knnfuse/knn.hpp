#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knnfuse/featurestore.hpp"
#include "knnfuse/probdist.hpp"

namespace knnfuse {

/// SqEuclidean stores the positive squared distance; the negation happens in
/// the posterior's exp(-d / tau). Cosine stores 1 - cos(q, x).
enum class Metric { SqEuclidean, Cosine };

Metric parse_metric(const std::string& name);
std::string to_string(Metric metric);

/// Either an explicit neighbor count or "mean images per class".
struct KSpec {
    std::optional<std::size_t> value;  // nullopt means MeanPerClass

    static KSpec fixed(std::size_t k) { return KSpec{k}; }
    static KSpec mean_per_class() { return KSpec{}; }
    bool is_mean_per_class() const { return !value.has_value(); }

    /// "mean" or a positive integer.
    static KSpec parse(const std::string& text);
    std::string to_string() const;

    friend bool operator==(const KSpec&, const KSpec&) = default;
};

struct KnnConfig {
    KSpec k = KSpec::fixed(128);
    double tau = 0.06;
    Metric metric = Metric::SqEuclidean;
};

/// Retrieved neighbors, nearest first. Equal distances are ordered by bank index.
struct NeighborSet {
    std::vector<std::size_t> indices;
    std::vector<double> distances;
    std::vector<std::uint32_t> labels;

    std::size_t size() const noexcept { return indices.size(); }

    /// First `k` neighbors (a top-k' result truncated to k <= k' equals top-k).
    NeighborSet prefix(std::size_t k) const;
};

/// MeanPerClass resolves to round(n / nonempty classes) clamped to [1, n-1];
/// explicit values are returned unchanged.
std::size_t resolve_k(const KSpec& spec, const FeatureBank& bank);

/// Exact brute-force search structure over a bank that must outlive it.
///
/// Distances come from |q|^2 + |x|^2 - 2 q.x with precomputed bank norms,
/// evaluated in double over cache-sized query x bank panels. Every (q, x)
/// pair goes through the same fixed-order accumulation, so results do not
/// depend on worker count or panel position. Top-k uses a bounded max-heap
/// per query, keyed on (distance, bank index).
class KnnIndex {
public:
    KnnIndex(const FeatureBank& bank, Metric metric);

    const FeatureBank& bank() const noexcept { return *bank_; }
    Metric metric() const noexcept { return metric_; }

    /// k nearest rows for each query. `exclude`, when non-empty, holds one
    /// optional bank index per query that must not be returned.
    std::vector<NeighborSet> search(MatrixView queries, std::size_t k,
                                    std::span<const std::optional<std::size_t>> exclude = {},
                                    std::size_t threads = 1) const;

    NeighborSet search_one(std::span<const float> query, std::size_t k,
                           std::optional<std::size_t> exclude = std::nullopt) const;

    /// Full m x n distance matrix, row-major.
    std::vector<double> distances(MatrixView queries, std::size_t threads = 1) const;

private:
    const FeatureBank* bank_;
    Metric metric_;
    std::vector<double> norms_;  // squared norms of bank rows
};

std::vector<double> pairwise_distances(MatrixView queries, const FeatureBank& bank, Metric metric,
                                       std::size_t threads = 1);

NeighborSet topk(std::span<const float> query, const FeatureBank& bank, const KnnConfig& cfg,
                 std::optional<std::size_t> exclude = std::nullopt);

/// Temperature-weighted vote: p(c) proportional to the sum of exp(-d / tau)
/// over neighbors of class c. The minimum distance is subtracted before
/// exponentiation, which leaves the ratio unchanged.
ProbDist knn_posterior(const NeighborSet& neighbors, double tau, std::uint32_t class_count);

struct LooResult {
    std::vector<ProbDist> dists;
    std::vector<double> p_gt;  // posterior mass on each sample's own label
};

/// Posterior for every training row with that row removed from the datastore.
LooResult loo_posteriors(const FeatureBank& train, const KnnConfig& cfg, std::size_t threads = 1);

/// Posteriors for arbitrary queries against an index; `exclude` as in search().
std::vector<ProbDist> knn_posteriors(const KnnIndex& index, MatrixView queries, std::size_t k,
                                     double tau,
                                     std::span<const std::optional<std::size_t>> exclude = {},
                                     std::size_t threads = 1);

}  // namespace knnfuse

#include "knnfuse/knn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <utility>

#include "knnfuse/error.hpp"
#include "knnfuse/parallel.hpp"

namespace knnfuse {

namespace {

constexpr std::size_t kLanes = 8;
constexpr std::size_t kQueryBlock = 32;
constexpr std::size_t kPanelFloats = 64 * 1024;  // ~256 KB of bank rows per panel

inline double combine(const double* acc) {
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// Every (q, x) pair goes through the same 8-lane accumulation and combine,
// whichever kernel computes it; dot_tile only shares loads across a tile.
template <typename T>
inline double dot1(const double* q, const T* x, std::size_t dim) {
    double acc[kLanes] = {};
    std::size_t j = 0;
    for (; j + kLanes <= dim; j += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) acc[l] += q[j + l] * static_cast<double>(x[j + l]);
    }
    for (std::size_t l = 0; j < dim; ++j, ++l) acc[l] += q[j] * static_cast<double>(x[j]);
    return combine(acc);
}

// kTileQ queries (stride dim) against kTileR consecutive rows (stride dim).
constexpr std::size_t kTileQ = 4;
constexpr std::size_t kTileR = 3;

inline void dot_tile(const double* q, const double* x, std::size_t dim, double (&out)[kTileQ][kTileR]) {
    double acc[kTileQ][kTileR][kLanes] = {};
    std::size_t j = 0;
    for (; j + kLanes <= dim; j += kLanes) {
        for (std::size_t a = 0; a < kTileQ; ++a) {
            for (std::size_t r = 0; r < kTileR; ++r) {
                for (std::size_t l = 0; l < kLanes; ++l) {
                    acc[a][r][l] += q[a * dim + j + l] * x[r * dim + j + l];
                }
            }
        }
    }
    for (std::size_t l = 0; j < dim; ++j, ++l) {
        for (std::size_t a = 0; a < kTileQ; ++a) {
            for (std::size_t r = 0; r < kTileR; ++r) acc[a][r][l] += q[a * dim + j] * x[r * dim + j];
        }
    }
    for (std::size_t a = 0; a < kTileQ; ++a) {
        for (std::size_t r = 0; r < kTileR; ++r) out[a][r] = combine(acc[a][r]);
    }
}

inline double to_distance(Metric metric, double q_norm, double x_norm, double dot) {
    if (metric == Metric::SqEuclidean) {
        const double d = q_norm + x_norm - 2.0 * dot;
        return d > 0.0 ? d : 0.0;
    }
    const double d = 1.0 - dot / std::sqrt(q_norm * x_norm);
    return std::clamp(d, 0.0, 2.0);
}

// Bounded max-heap on (distance, index); keeps the k lexicographically smallest.
class BoundedHeap {
public:
    explicit BoundedHeap(std::size_t k) : k_(k) { items_.reserve(k); }

    void push(double d, std::size_t i) {
        if (items_.size() < k_) {
            items_.emplace_back(d, i);
            std::push_heap(items_.begin(), items_.end());
        } else if (std::pair(d, i) < items_.front()) {
            std::pop_heap(items_.begin(), items_.end());
            items_.back() = {d, i};
            std::push_heap(items_.begin(), items_.end());
        }
    }

    NeighborSet finish(const FeatureBank& bank) {
        std::sort_heap(items_.begin(), items_.end());
        NeighborSet out;
        out.indices.reserve(items_.size());
        out.distances.reserve(items_.size());
        out.labels.reserve(items_.size());
        for (const auto& [d, i] : items_) {
            out.indices.push_back(i);
            out.distances.push_back(d);
            out.labels.push_back(bank.label(i));
        }
        return out;
    }

private:
    std::size_t k_;
    std::vector<std::pair<double, std::size_t>> items_;
};

// Visits every (query in block, bank row) pair panel by panel, calling
// sink(query_offset, bank_index, distance) in ascending bank order per query.
template <typename Sink>
void scan_block(const FeatureBank& bank, Metric metric, const std::vector<double>& norms,
                MatrixView queries, std::size_t q_begin, std::size_t q_end, Sink&& sink) {
    const std::size_t dim = bank.dim();
    const std::size_t n = bank.size();
    const std::size_t nq = q_end - q_begin;

    std::vector<double> qd(nq * dim);
    std::vector<double> q_norms(nq);
    for (std::size_t a = 0; a < nq; ++a) {
        auto row = queries.row(q_begin + a);
        std::copy(row.begin(), row.end(), qd.begin() + static_cast<std::ptrdiff_t>(a * dim));
        q_norms[a] = dot1(qd.data() + a * dim, row.data(), dim);
        if (metric == Metric::Cosine && q_norms[a] == 0.0) {
            throw Error(ErrorCode::ZeroVector, "cosine distance undefined for a zero query");
        }
    }

    const float* base = bank.raw().data();
    const std::size_t panel_rows = std::max<std::size_t>(kTileR, kPanelFloats / dim);
    std::vector<double> panel(std::min(n, panel_rows) * dim);
    double tile[kTileQ][kTileR];
    for (std::size_t p0 = 0; p0 < n; p0 += panel_rows) {
        const std::size_t p1 = std::min(n, p0 + panel_rows);
        std::copy(base + p0 * dim, base + p1 * dim, panel.begin());
        auto emit = [&](std::size_t a, std::size_t j, double dot) {
            sink(a, j, to_distance(metric, q_norms[a], norms[j], dot));
        };
        std::size_t a = 0;
        for (; a + kTileQ <= nq; a += kTileQ) {
            const double* q = qd.data() + a * dim;
            std::size_t j = p0;
            for (; j + kTileR <= p1; j += kTileR) {
                dot_tile(q, panel.data() + (j - p0) * dim, dim, tile);
                for (std::size_t t = 0; t < kTileQ; ++t) {
                    for (std::size_t r = 0; r < kTileR; ++r) emit(a + t, j + r, tile[t][r]);
                }
            }
            for (; j < p1; ++j) {
                for (std::size_t t = 0; t < kTileQ; ++t) {
                    emit(a + t, j, dot1(q + t * dim, panel.data() + (j - p0) * dim, dim));
                }
            }
        }
        for (; a < nq; ++a) {
            const double* q = qd.data() + a * dim;
            for (std::size_t j = p0; j < p1; ++j) emit(a, j, dot1(q, panel.data() + (j - p0) * dim, dim));
        }
    }
}

void check_dims(MatrixView queries, const FeatureBank& bank) {
    if (queries.cols != bank.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "queries have dimension " + std::to_string(queries.cols) +
                                                      ", bank has " + std::to_string(bank.dim()));
    }
}

}  // namespace

Metric parse_metric(const std::string& name) {
    if (name == "sqeuclidean" || name == "l2") return Metric::SqEuclidean;
    if (name == "cosine") return Metric::Cosine;
    throw Error(ErrorCode::InvalidArgument, "unknown metric '" + name + "'");
}

std::string to_string(Metric metric) {
    return metric == Metric::SqEuclidean ? "sqeuclidean" : "cosine";
}

KSpec KSpec::parse(const std::string& text) {
    if (text == "mean") return mean_per_class();
    std::size_t k = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), k);
    if (ec != std::errc() || p != text.data() + text.size() || k == 0) {
        throw Error(ErrorCode::InvalidArgument, "k must be a positive integer or 'mean', got '" + text + "'");
    }
    return fixed(k);
}

std::string KSpec::to_string() const {
    return value ? std::to_string(*value) : std::string("mean");
}

NeighborSet NeighborSet::prefix(std::size_t k) const {
    k = std::min(k, size());
    NeighborSet out;
    out.indices.assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(k));
    out.distances.assign(distances.begin(), distances.begin() + static_cast<std::ptrdiff_t>(k));
    out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(k));
    return out;
}

std::size_t resolve_k(const KSpec& spec, const FeatureBank& bank) {
    if (spec.value) return *spec.value;
    std::size_t nonempty = 0;
    for (auto s : bank.class_sizes()) nonempty += s > 0;
    const double mean = static_cast<double>(bank.size()) / static_cast<double>(nonempty);
    const auto k = static_cast<std::size_t>(std::llround(mean));
    const std::size_t upper = bank.size() > 1 ? bank.size() - 1 : 1;
    return std::clamp<std::size_t>(k, 1, upper);
}

KnnIndex::KnnIndex(const FeatureBank& bank, Metric metric)
    : bank_(&bank), metric_(metric), norms_(bank.size()) {
    const std::size_t dim = bank.dim();
    std::vector<double> xd(dim);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        auto row = bank.row(i);
        std::copy(row.begin(), row.end(), xd.begin());
        norms_[i] = dot1(xd.data(), row.data(), dim);
        if (metric == Metric::Cosine && norms_[i] == 0.0) {
            throw Error(ErrorCode::ZeroVector, "cosine distance undefined for zero bank row " + std::to_string(i));
        }
    }
}

std::vector<NeighborSet> KnnIndex::search(MatrixView queries, std::size_t k,
                                          std::span<const std::optional<std::size_t>> exclude,
                                          std::size_t threads) const {
    check_dims(queries, *bank_);
    if (!exclude.empty() && exclude.size() != queries.rows) {
        throw Error(ErrorCode::LengthMismatch, "exclude list must match the query count");
    }
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be positive");
    for (std::size_t a = 0; a < queries.rows; ++a) {
        const bool excluding = !exclude.empty() && exclude[a] && *exclude[a] < bank_->size();
        const std::size_t available = bank_->size() - (excluding ? 1 : 0);
        if (k > available) {
            throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " but only " +
                                                  std::to_string(available) + " candidates");
        }
    }

    std::vector<NeighborSet> out(queries.rows);
    const std::size_t blocks = (queries.rows + kQueryBlock - 1) / kQueryBlock;
    parallel_for(blocks, threads, [&](std::size_t b) {
        const std::size_t q0 = b * kQueryBlock;
        const std::size_t q1 = std::min(queries.rows, q0 + kQueryBlock);
        std::vector<BoundedHeap> heaps(q1 - q0, BoundedHeap(k));
        std::vector<std::size_t> skip(q1 - q0, bank_->size());
        if (!exclude.empty()) {
            for (std::size_t a = q0; a < q1; ++a) {
                if (exclude[a]) skip[a - q0] = *exclude[a];
            }
        }
        scan_block(*bank_, metric_, norms_, queries, q0, q1,
                   [&](std::size_t a, std::size_t j, double d) {
                       if (j != skip[a]) heaps[a].push(d, j);
                   });
        for (std::size_t a = q0; a < q1; ++a) out[a] = heaps[a - q0].finish(*bank_);
    });
    return out;
}

NeighborSet KnnIndex::search_one(std::span<const float> query, std::size_t k,
                                 std::optional<std::size_t> exclude) const {
    const std::optional<std::size_t> ex[1] = {exclude};
    return std::move(search(MatrixView{query, 1, query.size()}, k, ex, 1).front());
}

std::vector<double> KnnIndex::distances(MatrixView queries, std::size_t threads) const {
    check_dims(queries, *bank_);
    const std::size_t n = bank_->size();
    std::vector<double> out(queries.rows * n);
    const std::size_t blocks = (queries.rows + kQueryBlock - 1) / kQueryBlock;
    parallel_for(blocks, threads, [&](std::size_t b) {
        const std::size_t q0 = b * kQueryBlock;
        const std::size_t q1 = std::min(queries.rows, q0 + kQueryBlock);
        scan_block(*bank_, metric_, norms_, queries, q0, q1,
                   [&](std::size_t a, std::size_t j, double d) { out[(q0 + a) * n + j] = d; });
    });
    return out;
}

std::vector<double> pairwise_distances(MatrixView queries, const FeatureBank& bank, Metric metric,
                                       std::size_t threads) {
    return KnnIndex(bank, metric).distances(queries, threads);
}

NeighborSet topk(std::span<const float> query, const FeatureBank& bank, const KnnConfig& cfg,
                 std::optional<std::size_t> exclude) {
    return KnnIndex(bank, cfg.metric).search_one(query, resolve_k(cfg.k, bank), exclude);
}

ProbDist knn_posterior(const NeighborSet& neighbors, double tau, std::uint32_t class_count) {
    if (neighbors.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty neighbor set");
    if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be positive");
    const double d_min = *std::min_element(neighbors.distances.begin(), neighbors.distances.end());
    ProbDist probs(class_count, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        const double w = std::exp(-(neighbors.distances[i] - d_min) / tau);
        probs[neighbors.labels[i]] += w;
        total += w;
    }
    for (auto& p : probs) p /= total;
    return probs;
}

std::vector<ProbDist> knn_posteriors(const KnnIndex& index, MatrixView queries, std::size_t k,
                                     double tau, std::span<const std::optional<std::size_t>> exclude,
                                     std::size_t threads) {
    const auto neighbors = index.search(queries, k, exclude, threads);
    std::vector<ProbDist> out;
    out.reserve(neighbors.size());
    for (const auto& ns : neighbors) out.push_back(knn_posterior(ns, tau, index.bank().class_count()));
    return out;
}

LooResult loo_posteriors(const FeatureBank& train, const KnnConfig& cfg, std::size_t threads) {
    const std::size_t k = resolve_k(cfg.k, train);
    if (train.size() < 2 || k > train.size() - 1) {
        throw Error(ErrorCode::KTooLarge, "leave-one-out needs k <= n-1 (k=" + std::to_string(k) +
                                              ", n=" + std::to_string(train.size()) + ")");
    }
    std::vector<std::optional<std::size_t>> exclude(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) exclude[i] = i;

    KnnIndex index(train, cfg.metric);
    LooResult out;
    out.dists = knn_posteriors(index, train.features(), k, cfg.tau, exclude, threads);
    out.p_gt.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) out.p_gt.push_back(out.dists[i][train.label(i)]);
    return out;
}

}  // namespace knnfuse

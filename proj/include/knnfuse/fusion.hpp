#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knnfuse/knn.hpp"
#include "knnfuse/parametric.hpp"
#include "knnfuse/probdist.hpp"

namespace knnfuse {

/// Base: classifier alone. Knn: k-NN posterior alone. JointInf: fusion with a
/// classifier trained on plain cross-entropy. Joint: fusion with a classifier
/// trained on the k-NN-weighted loss. JointInf and Joint differ only in which
/// classifier the caller supplies.
enum class PredictMode { Base, Knn, JointInf, Joint };

PredictMode parse_mode(const std::string& name);
std::string to_string(PredictMode mode);

struct FusionConfig {
    double lambda = 0.5;
    KnnConfig knn;
};

/// lambda * p_knn + (1 - lambda) * p_clf.
ProbDist fuse(std::span<const double> p_knn, std::span<const double> p_clf, double lambda);

struct Predictions {
    std::vector<ProbDist> probs;
    std::vector<std::uint32_t> top1;
};

Predictions make_predictions(std::vector<ProbDist> probs);

/// Entrywise fusion of cached per-query distributions.
Predictions fuse_all(std::span<const ProbDist> p_knn, std::span<const ProbDist> p_clf, double lambda);

/// Queries must already be preprocessed with the datastore's stats.
/// `classifier` is required for every mode but Knn; `datastore` for every mode but Base.
Predictions predict(MatrixView queries, PredictMode mode, const FusionConfig& cfg,
                    const Model* classifier, const KnnIndex* datastore, std::size_t threads = 1);

}  // namespace knnfuse

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "knnfuse/evalreport.hpp"
#include "knnfuse/featurestore.hpp"
#include "knnfuse/knn.hpp"
#include "knnfuse/parametric.hpp"

namespace knnfuse {

struct PipelineConfig {
    Recipe recipe = Recipe::L2ThenCenter;
    KnnConfig knn;
    LossConfig loss;  // alpha > 0 gives Base', alpha = 0 makes Joint coincide with JointInf
    OptimizerConfig opt;
    std::vector<std::size_t> hidden;
    double lambda = 0.5;
    std::size_t threads = 1;

    nlohmann::json to_json() const;
};

struct PipelineResult {
    double base_top1 = 0.0;
    double knn_top1 = 0.0;
    double joint_inf_top1 = 0.0;
    double joint_top1 = 0.0;
    EvalReport joint_report;
};

/// Leave-one-out style k-NN posteriors for training rows against a datastore:
/// `store_position[i]`, when set, is the datastore row of training row i and is
/// excluded from its own neighborhood.
std::vector<ProbDist> datastore_posteriors(const KnnIndex& store, MatrixView train_rows,
                                           std::span<const std::optional<std::size_t>> store_position,
                                           const KnnConfig& cfg, std::size_t threads);

/// Full Base / k-NN / JointInf / Joint evaluation. The classifier is trained
/// on rows `classifier_rows` of `train`, the datastore holds rows
/// `datastore_rows`; preprocessing statistics come from the datastore.
PipelineResult run_pipeline(const FeatureBank& train, std::span<const std::size_t> classifier_rows,
                            std::span<const std::size_t> datastore_rows, const FeatureBank& test,
                            const PipelineConfig& cfg);

enum class AblationSweep { Classifier, Datastore };

std::string to_string(AblationSweep sweep);
AblationSweep parse_sweep(const std::string& name);

struct AblationPoint {
    AblationSweep sweep = AblationSweep::Classifier;
    double fraction = 1.0;
    PipelineResult result;
};

/// Data-size ablation: for each sweep, subsample (stratified, nested at a fixed
/// seed) either the classifier's training rows or the datastore while the
/// other stays full. Points with identical (classifier, datastore) fractions
/// are computed once.
std::vector<AblationPoint> ablate(const FeatureBank& train, const FeatureBank& test,
                                  std::span<const double> fractions, std::span<const AblationSweep> sweeps,
                                  const PipelineConfig& cfg, std::uint64_t seed);

}  // namespace knnfuse

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "knnfuse/featurestore.hpp"
#include "knnfuse/fusion.hpp"
#include "knnfuse/knn.hpp"
#include "knnfuse/parametric.hpp"

namespace knnfuse {

struct GridSpec {
    std::vector<KSpec> k_grid;
    std::vector<double> tau_grid;
    std::vector<double> alpha_grid;
    std::vector<double> lambda_grid;
    std::vector<double> lr_grid;
    std::vector<double> wd_grid;
    std::vector<Factor> factors = {Factor::Nll};
    std::vector<double> gammas = {2.0};

    /// k in {1, 2, ..., 512, mean}; tau in {0.001, 0.01, 0.1, 1, 10} plus
    /// 0.01*{1..10} and 0.1*{1..10} (deduplicated, ascending); alpha in
    /// {0.01, 0.001, 0.0001}; lambda in {0.50, 0.55, ..., 0.95}; linear-probe
    /// learning rates and weight decays.
    static GridSpec defaults();

    /// Adds lambda = 0 (pure classifier), which makes the fused selection
    /// never worse on val than the classifier alone.
    GridSpec& include_zero_lambda();
    /// Adds alpha = 0 (plain cross-entropy runs) to the joint sweep.
    GridSpec& include_zero_alpha();

    /// Reads the keys k, tau, alpha, lambda, lr, wd, factor, gamma; missing keys
    /// keep their defaults. Scalars are accepted where lists are expected.
    static GridSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    void validate() const;
};

struct KnnGridRow {
    KSpec k;
    std::size_t k_resolved = 0;
    double tau = 0.0;
    double val_top1 = 0.0;
};

struct KnnTuneResult {
    KSpec best_k;
    std::size_t best_k_resolved = 0;
    double best_tau = 0.0;
    double best_val_top1 = 0.0;
    std::vector<KnnGridRow> table;  // k-major, |k_grid| x |tau_grid| rows
};

/// Exhaustive (k, tau) search on val top-1. Explicit k values larger than the
/// datastore are clamped to its size. Ties go to the smaller resolved k, then
/// the smaller tau. One search at the largest k serves every k by prefix.
KnnTuneResult tune_knn(const FeatureBank& train, const FeatureBank& val, const GridSpec& grid,
                       Metric metric = Metric::SqEuclidean, std::size_t threads = 1);

struct LambdaTuneResult {
    double best_lambda = 0.0;
    double best_val_top1 = 0.0;
    std::vector<std::pair<double, double>> table;  // (lambda, val top-1) in grid order
};

/// Best lambda on cached distributions; ties go to the smallest lambda.
LambdaTuneResult tune_lambda(std::span<const ProbDist> val_knn, std::span<const ProbDist> val_clf,
                             std::span<const std::uint32_t> labels, std::span<const double> lambda_grid);

struct JointTuneOptions {
    OptimizerConfig opt;  // base_lr and weight_decay are overridden by the grid
    std::vector<std::size_t> hidden;
    Metric metric = Metric::SqEuclidean;
    bool full_product = false;  // search (k, tau) jointly instead of fixing them from tune_knn
    std::size_t threads = 1;
};

struct JointGridRow {
    KSpec k;
    std::size_t k_resolved = 0;
    double tau = 0.0;
    double lr = 0.0;
    double wd = 0.0;
    double alpha = 0.0;
    Factor factor = Factor::Nll;
    double gamma = 0.0;
    bool diverged = false;
    double classifier_val_top1 = 0.0;  // the trained classifier on its own
    double best_lambda = 0.0;
    double fused_val_top1 = 0.0;       // best over the lambda grid
    double runtime_seconds = 0.0;
};

struct JointSelection {
    std::size_t row = 0;
    double lambda = 0.0;
    double val_top1 = 0.0;
};

struct JointTuneResult {
    std::optional<KnnTuneResult> knn;  // set unless full_product
    std::vector<JointGridRow> table;
    // Selections by val top-1, first row in grid order on ties. Base and
    // JointInf exist only when the alpha grid contains 0; Base' only when it
    // contains a positive alpha.
    std::optional<JointSelection> base;
    std::optional<JointSelection> base_prime;
    std::optional<JointSelection> joint_inf;
    std::optional<JointSelection> joint;
    // Trained classifiers for the selected rows, keyed like the selections.
    std::optional<Model> base_model;
    std::optional<Model> base_prime_model;
    std::optional<Model> joint_inf_model;
    std::optional<Model> joint_model;
};

/// Nested search: (k, tau) from tune_knn (or every pair with full_product);
/// for each, leave-one-out p_gt on train, then one training run per
/// (lr, wd, factor/gamma, alpha) cell, and a post hoc lambda sweep on cached
/// val distributions. Diverged runs are recorded and skipped.
JointTuneResult tune_joint(const FeatureBank& train, const FeatureBank& val, const GridSpec& grid,
                           const JointTuneOptions& options);

/// report.csv: every hyperparameter, val top-1 columns, and training seconds.
std::string joint_report_csv(const JointTuneResult& result);
std::string knn_report_csv(const KnnTuneResult& result);

}  // namespace knnfuse

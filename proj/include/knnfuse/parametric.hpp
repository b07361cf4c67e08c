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

/// Dense layer: weights are out x in, row-major.
struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weights;
    std::vector<double> bias;

    friend bool operator==(const Layer&, const Layer&) = default;
};

/// Softmax classifier: affine layers with ReLU in between, last layer emits C logits.
/// A single layer is the linear probe.
struct Model {
    std::vector<Layer> layers;

    std::size_t input_dim() const { return layers.front().in; }
    std::uint32_t class_count() const { return static_cast<std::uint32_t>(layers.back().out); }
    std::vector<std::size_t> hidden() const;
    std::size_t parameter_count() const;

    /// Same-shaped model with every parameter zero (used as a gradient buffer).
    Model zeros_like() const;

    friend bool operator==(const Model&, const Model&) = default;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); hidden biases likewise; every
/// final-layer bias set to -log((1 - prior_pi) / prior_pi).
Model init_model(std::size_t dim, std::uint32_t classes, std::span<const std::size_t> hidden,
                 std::uint64_t seed, double prior_pi = 0.01);

struct ForwardResult {
    std::vector<double> logits;
    ProbDist probs;
};

ForwardResult forward(const Model& model, std::span<const double> x);
ForwardResult forward(const Model& model, std::span<const float> x);

/// Max-shifted softmax.
ProbDist softmax(std::span<const double> logits);

enum class Factor { Nll, Focal };

Factor parse_factor(const std::string& name);
std::string to_string(Factor factor);

struct LossConfig {
    double alpha = 0.0;
    Factor factor = Factor::Nll;
    double gamma = 2.0;        // Focal only
    double log_floor = -100.0;  // log outputs are clamped to >= log_floor
};

/// Hardness weight m(p): min(-log p, -log_floor) for NLL, (1 - p)^gamma for Focal.
double modulating_factor(double p_gt, const LossConfig& cfg);

/// Per-sample loss multiplier 1 + alpha * m(p_gt).
double sample_weight(double p_gt, const LossConfig& cfg);

/// (1 + alpha * m(p_gt)) * (-log dist[label]).
double joint_loss(std::span<const double> dist, std::uint32_t label, double p_gt, const LossConfig& cfg);

/// Mean over `rows` of weight[row] * cross-entropy, and its gradient w.r.t. every
/// parameter (written into `grad`, which must be shaped like `model`). Weight
/// decay is not included. Accumulation is sequential in `rows` order.
double batch_loss_and_gradient(const Model& model, MatrixView x, std::span<const std::uint32_t> labels,
                               std::span<const double> weights, std::span<const std::size_t> rows,
                               Model& grad);

struct OptimizerConfig {
    double base_lr = 0.1;
    std::size_t batch_size = 256;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::size_t warmup_epochs = 10;
    std::size_t total_epochs = 100;
    std::uint64_t seed = 0;
    double prior_pi = 0.01;
};

/// base_lr / 256 * batch_size.
double effective_lr(const OptimizerConfig& cfg);

/// Linear warmup from 0 over warmup_epochs, then cosine decay to 0 at total_epochs.
double lr_at(std::size_t step, const OptimizerConfig& cfg, std::size_t steps_per_epoch);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::optional<double> val_top1;
};

struct TrainResult {
    Model model;
    std::vector<EpochLog> log;
};

/// SGD with momentum and L2 weight decay on weights (not biases), seeded
/// per-epoch shuffling, partial last batch kept, final-epoch model returned.
/// p_gt holds the leave-one-out k-NN probability of each row's label; with
/// alpha = 0 every weight is 1 and this is plain cross-entropy training.
TrainResult train(Model model, const FeatureBank& train, std::span<const double> p_gt,
                  const LossConfig& loss, const OptimizerConfig& opt,
                  const FeatureBank* val = nullptr);

std::vector<ProbDist> predict_probs(const Model& model, MatrixView x, std::size_t threads = 1);

}  // namespace knnfuse

#include "knnfuse/parametric.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "knnfuse/error.hpp"
#include "knnfuse/parallel.hpp"
#include "knnfuse/rng.hpp"

namespace knnfuse {

std::vector<std::size_t> Model::hidden() const {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) out.push_back(layers[l].out);
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t total = 0;
    for (const auto& layer : layers) total += layer.weights.size() + layer.bias.size();
    return total;
}

Model Model::zeros_like() const {
    Model out = *this;
    for (auto& layer : out.layers) {
        std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    }
    return out;
}

Model init_model(std::size_t dim, std::uint32_t classes, std::span<const std::size_t> hidden,
                 std::uint64_t seed, double prior_pi) {
    if (dim == 0 || classes < 2) throw Error(ErrorCode::InvalidArgument, "model needs D >= 1 and C >= 2");
    if (!(prior_pi > 0.0 && prior_pi < 1.0)) throw Error(ErrorCode::InvalidArgument, "prior_pi must lie in (0, 1)");
    for (auto h : hidden) {
        if (h == 0) throw Error(ErrorCode::InvalidArgument, "hidden widths must be positive");
    }

    Rng rng(derive_seed(seed, "init"));
    Model model;
    std::size_t in = dim;
    for (std::size_t l = 0; l <= hidden.size(); ++l) {
        const bool last = l == hidden.size();
        Layer layer;
        layer.in = in;
        layer.out = last ? classes : hidden[l];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        layer.weights.resize(layer.out * layer.in);
        for (auto& w : layer.weights) w = rng.uniform(-bound, bound);
        layer.bias.resize(layer.out);
        if (last) {
            std::fill(layer.bias.begin(), layer.bias.end(), -std::log((1.0 - prior_pi) / prior_pi));
        } else {
            for (auto& b : layer.bias) b = rng.uniform(-bound, bound);
        }
        in = layer.out;
        model.layers.push_back(std::move(layer));
    }
    return model;
}

ProbDist softmax(std::span<const double> logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    ProbDist probs(logits.size());
    double total = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        probs[c] = std::exp(logits[c] - top);
        total += probs[c];
    }
    for (auto& p : probs) p /= total;
    return probs;
}

namespace {

// Affine map of one layer: out = W a + b.
void affine(const Layer& layer, std::span<const double> a, std::vector<double>& out) {
    out.assign(layer.bias.begin(), layer.bias.end());
    for (std::size_t o = 0; o < layer.out; ++o) {
        const double* w = layer.weights.data() + o * layer.in;
        double s = 0.0;
        for (std::size_t i = 0; i < layer.in; ++i) s += w[i] * a[i];
        out[o] += s;
    }
}

// Forward pass keeping every layer input; pre[l] is layer l's affine output.
void forward_trace(const Model& model, std::span<const double> x, std::vector<std::vector<double>>& inputs,
                   std::vector<std::vector<double>>& pre) {
    const std::size_t depth = model.layers.size();
    inputs.resize(depth);
    pre.resize(depth);
    inputs[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < depth; ++l) {
        affine(model.layers[l], inputs[l], pre[l]);
        if (l + 1 < depth) {
            inputs[l + 1] = pre[l];
            for (auto& v : inputs[l + 1]) v = v > 0.0 ? v : 0.0;
        }
    }
}

double log_sum_exp(std::span<const double> z) {
    const double top = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - top);
    return top + std::log(s);
}

}  // namespace

ForwardResult forward(const Model& model, std::span<const double> x) {
    if (x.size() != model.input_dim()) {
        throw Error(ErrorCode::DimensionMismatch, "input has dimension " + std::to_string(x.size()) +
                                                      ", model expects " + std::to_string(model.input_dim()));
    }
    std::vector<std::vector<double>> inputs, pre;
    forward_trace(model, x, inputs, pre);
    ForwardResult out;
    out.logits = std::move(pre.back());
    for (double z : out.logits) {
        if (!std::isfinite(z)) throw Error(ErrorCode::NonFiniteActivation, "non-finite logit");
    }
    out.probs = softmax(out.logits);
    return out;
}

ForwardResult forward(const Model& model, std::span<const float> x) {
    const std::vector<double> xd(x.begin(), x.end());
    return forward(model, std::span<const double>(xd));
}

Factor parse_factor(const std::string& name) {
    if (name == "nll") return Factor::Nll;
    if (name == "focal") return Factor::Focal;
    throw Error(ErrorCode::InvalidArgument, "unknown modulating factor '" + name + "'");
}

std::string to_string(Factor factor) { return factor == Factor::Nll ? "nll" : "focal"; }

double modulating_factor(double p_gt, const LossConfig& cfg) {
    p_gt = std::clamp(p_gt, 0.0, 1.0);
    if (cfg.factor == Factor::Focal) return std::pow(1.0 - p_gt, cfg.gamma);
    const double log_p = std::max(std::log(p_gt), cfg.log_floor);
    return -log_p;
}

double sample_weight(double p_gt, const LossConfig& cfg) {
    return 1.0 + cfg.alpha * modulating_factor(p_gt, cfg);
}

double joint_loss(std::span<const double> dist, std::uint32_t label, double p_gt, const LossConfig& cfg) {
    if (label >= dist.size()) throw Error(ErrorCode::LabelOutOfRange, "label outside distribution");
    const double ce = -std::log(dist[label]);
    return sample_weight(p_gt, cfg) * ce;
}

double batch_loss_and_gradient(const Model& model, MatrixView x, std::span<const std::uint32_t> labels,
                               std::span<const double> weights, std::span<const std::size_t> rows,
                               Model& grad) {
    for (auto& layer : grad.layers) {
        std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    }
    if (rows.empty()) return 0.0;

    const double inv_batch = 1.0 / static_cast<double>(rows.size());
    const std::size_t depth = model.layers.size();
    std::vector<std::vector<double>> inputs, pre;
    std::vector<double> xd(model.input_dim()), delta, delta_prev;
    double total = 0.0;

    for (auto r : rows) {
        auto row = x.row(r);
        std::copy(row.begin(), row.end(), xd.begin());
        forward_trace(model, xd, inputs, pre);

        const auto& logits = pre.back();
        const std::uint32_t y = labels[r];
        const double w = weights[r];
        total += w * (log_sum_exp(logits) - logits[y]);

        delta = softmax(logits);
        delta[y] -= 1.0;
        for (auto& d : delta) d *= w * inv_batch;

        for (std::size_t l = depth; l-- > 0;) {
            const Layer& layer = model.layers[l];
            Layer& g = grad.layers[l];
            const auto& a = inputs[l];
            for (std::size_t o = 0; o < layer.out; ++o) {
                double* gw = g.weights.data() + o * layer.in;
                const double d = delta[o];
                for (std::size_t i = 0; i < layer.in; ++i) gw[i] += d * a[i];
                g.bias[o] += d;
            }
            if (l == 0) break;
            delta_prev.assign(layer.in, 0.0);
            for (std::size_t o = 0; o < layer.out; ++o) {
                const double* w_row = layer.weights.data() + o * layer.in;
                const double d = delta[o];
                for (std::size_t i = 0; i < layer.in; ++i) delta_prev[i] += w_row[i] * d;
            }
            const auto& z = pre[l - 1];
            for (std::size_t i = 0; i < layer.in; ++i) {
                if (!(z[i] > 0.0)) delta_prev[i] = 0.0;
            }
            delta.swap(delta_prev);
        }
    }
    return total * inv_batch;
}

double effective_lr(const OptimizerConfig& cfg) {
    return cfg.base_lr / 256.0 * static_cast<double>(cfg.batch_size);
}

double lr_at(std::size_t step, const OptimizerConfig& cfg, std::size_t steps_per_epoch) {
    const double base = effective_lr(cfg);
    const std::size_t warmup = cfg.warmup_epochs * steps_per_epoch;
    const std::size_t total = cfg.total_epochs * steps_per_epoch;
    if (step < warmup) return base * static_cast<double>(step) / static_cast<double>(warmup);
    if (step >= total) return 0.0;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<ProbDist> predict_probs(const Model& model, MatrixView x, std::size_t threads) {
    std::vector<ProbDist> out(x.rows);
    parallel_for(x.rows, threads, [&](std::size_t i) { out[i] = forward(model, x.row(i)).probs; });
    return out;
}

namespace {

double top1_of(const Model& model, const FeatureBank& bank) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < bank.size(); ++i) {
        correct += argmax(forward(model, bank.row(i)).probs) == bank.label(i);
    }
    return static_cast<double>(correct) / static_cast<double>(bank.size());
}

}  // namespace

TrainResult train(Model model, const FeatureBank& train, std::span<const double> p_gt,
                  const LossConfig& loss, const OptimizerConfig& opt, const FeatureBank* val) {
    if (p_gt.size() != train.size()) {
        throw Error(ErrorCode::LengthMismatch, "p_gt has " + std::to_string(p_gt.size()) + " entries for " +
                                                   std::to_string(train.size()) + " training rows");
    }
    if (train.dim() != model.input_dim() || train.class_count() != model.class_count()) {
        throw Error(ErrorCode::DimensionMismatch, "model shape does not match the training bank");
    }
    if (opt.batch_size == 0 || opt.total_epochs == 0 || opt.warmup_epochs > opt.total_epochs) {
        throw Error(ErrorCode::InvalidArgument, "need batch_size >= 1, total_epochs >= 1, warmup <= total");
    }
    if (loss.alpha < 0.0 || loss.gamma < 0.0) {
        throw Error(ErrorCode::InvalidArgument, "alpha and gamma must be nonnegative");
    }

    std::vector<double> weights(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) weights[i] = sample_weight(p_gt[i], loss);

    const std::size_t n = train.size();
    const std::size_t steps_per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
    Rng rng(derive_seed(opt.seed, "shuffle"));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    Model grad = model.zeros_like();
    Model velocity = model.zeros_like();
    TrainResult result;
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= opt.total_epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += opt.batch_size, ++step) {
            const std::size_t end = std::min(n, start + opt.batch_size);
            std::span<const std::size_t> rows(order.data() + start, end - start);
            const double batch_loss =
                batch_loss_and_gradient(model, train.features(), train.labels(), weights, rows, grad);
            if (!std::isfinite(batch_loss)) {
                throw Error(ErrorCode::DivergedLoss, "non-finite loss at epoch " + std::to_string(epoch));
            }
            epoch_loss += batch_loss * static_cast<double>(end - start);

            const double lr = lr_at(step, opt, steps_per_epoch);
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                Layer& p = model.layers[l];
                Layer& g = grad.layers[l];
                Layer& v = velocity.layers[l];
                for (std::size_t i = 0; i < p.weights.size(); ++i) {
                    const double gi = g.weights[i] + opt.weight_decay * p.weights[i];
                    v.weights[i] = opt.momentum * v.weights[i] + gi;
                    p.weights[i] -= lr * v.weights[i];
                }
                for (std::size_t i = 0; i < p.bias.size(); ++i) {
                    v.bias[i] = opt.momentum * v.bias[i] + g.bias[i];
                    p.bias[i] -= lr * v.bias[i];
                }
            }
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = epoch_loss / static_cast<double>(n);
        if (val) entry.val_top1 = top1_of(model, *val);
        result.log.push_back(entry);
    }
    for (const auto& layer : model.layers) {
        for (double w : layer.weights) {
            if (!std::isfinite(w)) throw Error(ErrorCode::DivergedLoss, "non-finite parameter after training");
        }
    }
    result.model = std::move(model);
    return result;
}

}  // namespace knnfuse

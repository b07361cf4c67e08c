#include "knnfuse/pipeline.hpp"

#include <map>
#include <utility>

#include "knnfuse/error.hpp"
#include "knnfuse/fusion.hpp"
#include "knnfuse/rng.hpp"

namespace knnfuse {

nlohmann::json PipelineConfig::to_json() const {
    return {
        {"recipe", to_string(recipe)},
        {"k", knn.k.to_string()},
        {"tau", knn.tau},
        {"metric", to_string(knn.metric)},
        {"alpha", loss.alpha},
        {"factor", to_string(loss.factor)},
        {"gamma", loss.gamma},
        {"lambda", lambda},
        {"lr", opt.base_lr},
        {"wd", opt.weight_decay},
        {"batch_size", opt.batch_size},
        {"momentum", opt.momentum},
        {"epochs", opt.total_epochs},
        {"warmup", opt.warmup_epochs},
        {"prior_pi", opt.prior_pi},
        {"seed", opt.seed},
        {"hidden", hidden},
    };
}

std::vector<ProbDist> datastore_posteriors(const KnnIndex& store, MatrixView train_rows,
                                           std::span<const std::optional<std::size_t>> store_position,
                                           const KnnConfig& cfg, std::size_t threads) {
    const std::size_t k = resolve_k(cfg.k, store.bank());
    return knn_posteriors(store, train_rows, k, cfg.tau, store_position, threads);
}

PipelineResult run_pipeline(const FeatureBank& train, std::span<const std::size_t> classifier_rows,
                            std::span<const std::size_t> datastore_rows, const FeatureBank& test,
                            const PipelineConfig& cfg) {
    if (classifier_rows.empty() || datastore_rows.empty()) {
        throw Error(ErrorCode::EmptySplit, "classifier and datastore need at least one row");
    }
    const auto stats = fit_preprocess(train.select(datastore_rows), cfg.recipe);
    const FeatureBank train_pp = apply_preprocess(train, stats);
    const FeatureBank test_pp = apply_preprocess(test, stats);
    const FeatureBank store = train_pp.select(datastore_rows);
    const FeatureBank clf_train = train_pp.select(classifier_rows);
    const KnnIndex index(store, cfg.knn.metric);

    std::vector<double> ones(clf_train.size(), 1.0);
    std::vector<double> p_gt = ones;
    if (cfg.loss.alpha > 0.0) {
        std::vector<std::optional<std::size_t>> position_of(train.size());
        for (std::size_t s = 0; s < datastore_rows.size(); ++s) position_of[datastore_rows[s]] = s;
        std::vector<std::optional<std::size_t>> exclude;
        exclude.reserve(classifier_rows.size());
        for (auto r : classifier_rows) exclude.push_back(position_of[r]);
        const auto dists = datastore_posteriors(index, clf_train.features(), exclude, cfg.knn, cfg.threads);
        for (std::size_t i = 0; i < dists.size(); ++i) p_gt[i] = dists[i][clf_train.label(i)];
    }

    const Model init = init_model(train.dim(), train.class_count(), cfg.hidden, cfg.opt.seed, cfg.opt.prior_pi);
    LossConfig plain = cfg.loss;
    plain.alpha = 0.0;
    const Model base = knnfuse::train(init, clf_train, ones, plain, cfg.opt).model;
    const Model base_prime =
        cfg.loss.alpha > 0.0 ? knnfuse::train(init, clf_train, p_gt, cfg.loss, cfg.opt).model : base;

    FusionConfig fusion{cfg.lambda, cfg.knn};
    const auto base_pred = predict(test_pp.features(), PredictMode::Base, fusion, &base, nullptr, cfg.threads);
    const auto knn_pred = predict(test_pp.features(), PredictMode::Knn, fusion, nullptr, &index, cfg.threads);
    const auto prime_probs = predict_probs(base_prime, test_pp.features(), cfg.threads);
    const auto joint_inf = fuse_all(knn_pred.probs, base_pred.probs, cfg.lambda);
    const auto joint = fuse_all(knn_pred.probs, prime_probs, cfg.lambda);

    PipelineResult out;
    out.base_top1 = top1(base_pred.top1, test.labels());
    out.knn_top1 = top1(knn_pred.top1, test.labels());
    out.joint_inf_top1 = top1(joint_inf.top1, test.labels());
    out.joint_top1 = top1(joint.top1, test.labels());
    out.joint_report = evaluate(joint.probs, test.labels(), test.class_count(), "joint", cfg.to_json());
    return out;
}

std::string to_string(AblationSweep sweep) {
    return sweep == AblationSweep::Classifier ? "classifier" : "datastore";
}

AblationSweep parse_sweep(const std::string& name) {
    if (name == "classifier") return AblationSweep::Classifier;
    if (name == "datastore") return AblationSweep::Datastore;
    throw Error(ErrorCode::InvalidArgument, "unknown sweep '" + name + "'");
}

std::vector<AblationPoint> ablate(const FeatureBank& train, const FeatureBank& test,
                                  std::span<const double> fractions, std::span<const AblationSweep> sweeps,
                                  const PipelineConfig& cfg, std::uint64_t seed) {
    const std::uint64_t clf_seed = derive_seed(seed, "ablate-classifier");
    const std::uint64_t store_seed = derive_seed(seed, "ablate-datastore");

    std::map<std::pair<double, double>, PipelineResult> done;
    std::vector<AblationPoint> out;
    for (auto sweep : sweeps) {
        for (double f : fractions) {
            const double clf_fraction = sweep == AblationSweep::Classifier ? f : 1.0;
            const double store_fraction = sweep == AblationSweep::Datastore ? f : 1.0;
            const auto key = std::pair(clf_fraction, store_fraction);
            auto it = done.find(key);
            if (it == done.end()) {
                const auto clf_rows = subsample_indices(train, clf_fraction, clf_seed);
                const auto store_rows = subsample_indices(train, store_fraction, store_seed);
                it = done.emplace(key, run_pipeline(train, clf_rows, store_rows, test, cfg)).first;
            }
            AblationPoint point{sweep, f, it->second};
            point.result.joint_report.config["sweep"] = to_string(sweep);
            point.result.joint_report.config["fraction"] = f;
            point.result.joint_report.config["base_top1"] = point.result.base_top1;
            point.result.joint_report.config["knn_top1"] = point.result.knn_top1;
            point.result.joint_report.config["jointinf_top1"] = point.result.joint_inf_top1;
            out.push_back(std::move(point));
        }
    }
    return out;
}

}  // namespace knnfuse

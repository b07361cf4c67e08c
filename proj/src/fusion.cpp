#include "knnfuse/fusion.hpp"

#include "knnfuse/error.hpp"

namespace knnfuse {

PredictMode parse_mode(const std::string& name) {
    if (name == "base") return PredictMode::Base;
    if (name == "knn") return PredictMode::Knn;
    if (name == "jointinf" || name == "joint-inf") return PredictMode::JointInf;
    if (name == "joint") return PredictMode::Joint;
    throw Error(ErrorCode::InvalidArgument, "unknown mode '" + name + "'");
}

std::string to_string(PredictMode mode) {
    switch (mode) {
        case PredictMode::Base: return "base";
        case PredictMode::Knn: return "knn";
        case PredictMode::JointInf: return "jointinf";
        case PredictMode::Joint: return "joint";
    }
    return "base";
}

ProbDist fuse(std::span<const double> p_knn, std::span<const double> p_clf, double lambda) {
    if (p_knn.size() != p_clf.size()) {
        throw Error(ErrorCode::DimensionMismatch, "distributions differ in class count");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::InvalidArgument, "lambda must lie in [0, 1]");
    ProbDist out(p_knn.size());
    for (std::size_t c = 0; c < out.size(); ++c) {
        // Equal entries are returned as is: the exact interpolant, which rounding would perturb.
        out[c] = p_knn[c] == p_clf[c] ? p_knn[c] : lambda * p_knn[c] + (1.0 - lambda) * p_clf[c];
    }
    return out;
}

Predictions make_predictions(std::vector<ProbDist> probs) {
    Predictions out;
    out.top1.reserve(probs.size());
    for (const auto& p : probs) out.top1.push_back(argmax(p));
    out.probs = std::move(probs);
    return out;
}

Predictions fuse_all(std::span<const ProbDist> p_knn, std::span<const ProbDist> p_clf, double lambda) {
    if (p_knn.size() != p_clf.size()) throw Error(ErrorCode::DimensionMismatch, "query counts differ");
    std::vector<ProbDist> probs;
    probs.reserve(p_knn.size());
    for (std::size_t i = 0; i < p_knn.size(); ++i) probs.push_back(fuse(p_knn[i], p_clf[i], lambda));
    return make_predictions(std::move(probs));
}

Predictions predict(MatrixView queries, PredictMode mode, const FusionConfig& cfg,
                    const Model* classifier, const KnnIndex* datastore, std::size_t threads) {
    const bool needs_clf = mode != PredictMode::Knn;
    const bool needs_knn = mode != PredictMode::Base;
    if (needs_clf && !classifier) throw Error(ErrorCode::InvalidArgument, "mode requires a classifier");
    if (needs_knn && !datastore) throw Error(ErrorCode::InvalidArgument, "mode requires a k-NN datastore");

    std::vector<ProbDist> clf, knn;
    if (needs_clf) clf = predict_probs(*classifier, queries, threads);
    if (needs_knn) {
        const std::size_t k = resolve_k(cfg.knn.k, datastore->bank());
        knn = knn_posteriors(*datastore, queries, k, cfg.knn.tau, {}, threads);
    }
    if (needs_clf && needs_knn && classifier->class_count() != datastore->bank().class_count()) {
        throw Error(ErrorCode::DimensionMismatch, "classifier and datastore disagree on class count");
    }

    switch (mode) {
        case PredictMode::Base: return make_predictions(std::move(clf));
        case PredictMode::Knn: return make_predictions(std::move(knn));
        case PredictMode::JointInf:
        case PredictMode::Joint: return fuse_all(knn, clf, cfg.lambda);
    }
    return {};
}

}  // namespace knnfuse

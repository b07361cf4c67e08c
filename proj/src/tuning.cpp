#include "knnfuse/tuning.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>

#include "knnfuse/error.hpp"
#include "knnfuse/evalreport.hpp"
#include "knnfuse/parallel.hpp"

namespace knnfuse {

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

template <typename T>
std::vector<T> list_of(const nlohmann::json& v) {
    if (v.is_array()) return v.get<std::vector<T>>();
    return {v.get<T>()};
}

std::vector<KSpec> parse_k_list(const nlohmann::json& v) {
    std::vector<KSpec> out;
    auto one = [&](const nlohmann::json& e) {
        if (e.is_string()) out.push_back(KSpec::parse(e.get<std::string>()));
        else out.push_back(KSpec::fixed(e.get<std::size_t>()));
    };
    if (v.is_array()) {
        for (const auto& e : v) one(e);
    } else {
        one(v);
    }
    return out;
}

void add_unique(std::vector<double>& values, double v) {
    if (std::find(values.begin(), values.end(), v) == values.end()) values.push_back(v);
}

std::uint32_t argmax_correct(std::span<const ProbDist> probs, std::span<const std::uint32_t> labels) {
    std::uint32_t correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) correct += argmax(probs[i]) == labels[i];
    return correct;
}

}  // namespace

GridSpec GridSpec::defaults() {
    GridSpec g;
    for (std::size_t p = 0; p <= 9; ++p) g.k_grid.push_back(KSpec::fixed(std::size_t{1} << p));
    g.k_grid.push_back(KSpec::mean_per_class());

    for (double t : {0.001, 0.01, 0.1, 1.0, 10.0}) add_unique(g.tau_grid, t);
    for (int i = 1; i <= 10; ++i) add_unique(g.tau_grid, i / 100.0);
    for (int i = 1; i <= 10; ++i) add_unique(g.tau_grid, i / 10.0);
    std::sort(g.tau_grid.begin(), g.tau_grid.end());

    g.alpha_grid = {0.01, 0.001, 0.0001};
    for (int i = 0; i < 10; ++i) g.lambda_grid.push_back((50 + 5 * i) / 100.0);
    g.lr_grid = {0.5, 0.25, 0.1, 0.05, 0.025, 0.01, 0.0025, 0.001};
    g.wd_grid = {0.01, 0.001, 0.0001, 0.0};
    return g;
}

GridSpec& GridSpec::include_zero_lambda() {
    if (std::find(lambda_grid.begin(), lambda_grid.end(), 0.0) == lambda_grid.end()) {
        lambda_grid.insert(lambda_grid.begin(), 0.0);
    }
    return *this;
}

GridSpec& GridSpec::include_zero_alpha() {
    if (std::find(alpha_grid.begin(), alpha_grid.end(), 0.0) == alpha_grid.end()) {
        alpha_grid.insert(alpha_grid.begin(), 0.0);
    }
    return *this;
}

GridSpec GridSpec::from_json(const nlohmann::json& j) {
    GridSpec g = defaults();
    try {
        if (j.contains("k")) g.k_grid = parse_k_list(j["k"]);
        if (j.contains("tau")) g.tau_grid = list_of<double>(j["tau"]);
        if (j.contains("alpha")) g.alpha_grid = list_of<double>(j["alpha"]);
        if (j.contains("lambda")) g.lambda_grid = list_of<double>(j["lambda"]);
        if (j.contains("lr")) g.lr_grid = list_of<double>(j["lr"]);
        if (j.contains("wd")) g.wd_grid = list_of<double>(j["wd"]);
        if (j.contains("factor")) {
            g.factors.clear();
            for (const auto& name : list_of<std::string>(j["factor"])) g.factors.push_back(parse_factor(name));
        }
        if (j.contains("gamma")) g.gammas = list_of<double>(j["gamma"]);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("grids: ") + e.what());
    }
    g.validate();
    return g;
}

nlohmann::json GridSpec::to_json() const {
    nlohmann::json j;
    nlohmann::json ks = nlohmann::json::array();
    for (const auto& k : k_grid) {
        if (k.value) ks.push_back(*k.value); else ks.push_back("mean");
    }
    j["k"] = ks;
    j["tau"] = tau_grid;
    j["alpha"] = alpha_grid;
    j["lambda"] = lambda_grid;
    j["lr"] = lr_grid;
    j["wd"] = wd_grid;
    std::vector<std::string> names;
    for (auto f : factors) names.push_back(to_string(f));
    j["factor"] = names;
    j["gamma"] = gammas;
    return j;
}

void GridSpec::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw Error(ErrorCode::InvalidArgument, what);
    };
    require(!k_grid.empty() && !tau_grid.empty() && !alpha_grid.empty() && !lambda_grid.empty() &&
                !lr_grid.empty() && !wd_grid.empty() && !factors.empty() && !gammas.empty(),
            "every grid must be nonempty");
    for (const auto& k : k_grid) require(!k.value || *k.value > 0, "k values must be positive");
    for (double t : tau_grid) require(t > 0.0, "tau values must be positive");
    for (double a : alpha_grid) require(a >= 0.0, "alpha values must be nonnegative");
    for (double l : lambda_grid) require(l >= 0.0 && l <= 1.0, "lambda values must lie in [0, 1]");
    for (double lr : lr_grid) require(lr > 0.0, "learning rates must be positive");
    for (double wd : wd_grid) require(wd >= 0.0, "weight decays must be nonnegative");
    for (double g : gammas) require(g >= 0.0, "gamma values must be nonnegative");
}

KnnTuneResult tune_knn(const FeatureBank& train, const FeatureBank& val, const GridSpec& grid,
                       Metric metric, std::size_t threads) {
    grid.validate();
    std::vector<std::size_t> resolved;
    for (const auto& k : grid.k_grid) resolved.push_back(std::min(resolve_k(k, train), train.size()));
    const std::size_t k_max = *std::max_element(resolved.begin(), resolved.end());

    KnnIndex index(train, metric);
    const auto neighbors = index.search(val.features(), k_max, {}, threads);

    KnnTuneResult out;
    bool have_best = false;
    for (std::size_t a = 0; a < grid.k_grid.size(); ++a) {
        for (double tau : grid.tau_grid) {
            std::size_t correct = 0;
            for (std::size_t q = 0; q < val.size(); ++q) {
                const auto p = knn_posterior(neighbors[q].prefix(resolved[a]), tau, train.class_count());
                correct += argmax(p) == val.label(q);
            }
            KnnGridRow row{grid.k_grid[a], resolved[a], tau,
                           static_cast<double>(correct) / static_cast<double>(val.size())};
            const bool better =
                !have_best || row.val_top1 > out.best_val_top1 ||
                (row.val_top1 == out.best_val_top1 &&
                 (row.k_resolved < out.best_k_resolved ||
                  (row.k_resolved == out.best_k_resolved && row.tau < out.best_tau)));
            if (better) {
                have_best = true;
                out.best_k = row.k;
                out.best_k_resolved = row.k_resolved;
                out.best_tau = row.tau;
                out.best_val_top1 = row.val_top1;
            }
            out.table.push_back(row);
        }
    }
    return out;
}

LambdaTuneResult tune_lambda(std::span<const ProbDist> val_knn, std::span<const ProbDist> val_clf,
                             std::span<const std::uint32_t> labels, std::span<const double> lambda_grid) {
    if (val_knn.size() != val_clf.size() || val_knn.size() != labels.size()) {
        throw Error(ErrorCode::DimensionMismatch, "cached distributions and labels are misaligned");
    }
    if (lambda_grid.empty() || labels.empty()) throw Error(ErrorCode::InvalidArgument, "empty lambda grid or val set");
    LambdaTuneResult out;
    bool have_best = false;
    for (double lambda : lambda_grid) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            correct += argmax(fuse(val_knn[i], val_clf[i], lambda)) == labels[i];
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(labels.size());
        out.table.emplace_back(lambda, acc);
        if (!have_best || acc > out.best_val_top1 || (acc == out.best_val_top1 && lambda < out.best_lambda)) {
            have_best = true;
            out.best_lambda = lambda;
            out.best_val_top1 = acc;
        }
    }
    return out;
}

JointTuneResult tune_joint(const FeatureBank& train, const FeatureBank& val, const GridSpec& grid,
                           const JointTuneOptions& options) {
    grid.validate();
    if (train.size() < 2) throw Error(ErrorCode::KTooLarge, "leave-one-out needs at least two training rows");
    JointTuneResult result;

    std::vector<std::pair<KSpec, double>> kt;
    if (options.full_product) {
        for (const auto& k : grid.k_grid) {
            for (double tau : grid.tau_grid) kt.emplace_back(k, tau);
        }
    } else {
        result.knn = tune_knn(train, val, grid, options.metric, options.threads);
        kt.emplace_back(result.knn->best_k, result.knn->best_tau);
    }

    struct KnnCache {
        std::size_t k_resolved;
        std::vector<double> p_gt;
        std::vector<ProbDist> val_knn;
    };
    std::vector<KnnCache> caches;
    KnnIndex index(train, options.metric);
    for (const auto& [k, tau] : kt) {
        KnnCache cache;
        cache.k_resolved = std::min(resolve_k(k, train), train.size());
        KnnConfig loo_cfg{KSpec::fixed(std::min(cache.k_resolved, train.size() - 1)), tau, options.metric};
        cache.p_gt = loo_posteriors(train, loo_cfg, options.threads).p_gt;
        cache.val_knn = knn_posteriors(index, val.features(), cache.k_resolved, tau, {}, options.threads);
        caches.push_back(std::move(cache));
    }

    std::vector<std::pair<Factor, double>> objectives;
    for (auto f : grid.factors) {
        if (f == Factor::Nll) {
            objectives.emplace_back(f, 0.0);
        } else {
            for (double g : grid.gammas) objectives.emplace_back(f, g);
        }
    }

    struct Cell {
        std::size_t kt;
        double lr, wd;
        Factor factor;
        double gamma, alpha;
    };
    std::vector<Cell> cells;
    for (std::size_t a = 0; a < kt.size(); ++a) {
        for (double lr : grid.lr_grid) {
            for (double wd : grid.wd_grid) {
                for (const auto& [f, g] : objectives) {
                    for (double alpha : grid.alpha_grid) cells.push_back({a, lr, wd, f, g, alpha});
                }
            }
        }
    }

    result.table.resize(cells.size());
    std::vector<std::optional<Model>> models(cells.size());
    const Model init = init_model(train.dim(), train.class_count(), options.hidden, options.opt.seed,
                                  options.opt.prior_pi);

    parallel_for(cells.size(), options.threads, [&](std::size_t c) {
        const Cell& cell = cells[c];
        const KnnCache& cache = caches[cell.kt];
        JointGridRow& row = result.table[c];
        row.k = kt[cell.kt].first;
        row.k_resolved = cache.k_resolved;
        row.tau = kt[cell.kt].second;
        row.lr = cell.lr;
        row.wd = cell.wd;
        row.alpha = cell.alpha;
        row.factor = cell.factor;
        row.gamma = cell.gamma;

        OptimizerConfig opt = options.opt;
        opt.base_lr = cell.lr;
        opt.weight_decay = cell.wd;
        LossConfig loss;
        loss.alpha = cell.alpha;
        loss.factor = cell.factor;
        loss.gamma = cell.gamma;

        const auto t0 = std::chrono::steady_clock::now();
        try {
            auto trained = knnfuse::train(init, train, cache.p_gt, loss, opt, nullptr);
            const auto val_clf = predict_probs(trained.model, val.features(), 1);
            row.classifier_val_top1 =
                static_cast<double>(argmax_correct(val_clf, val.labels())) / static_cast<double>(val.size());
            const auto lam = tune_lambda(cache.val_knn, val_clf, val.labels(), grid.lambda_grid);
            row.best_lambda = lam.best_lambda;
            row.fused_val_top1 = lam.best_val_top1;
            models[c] = std::move(trained.model);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DivergedLoss && e.code() != ErrorCode::NonFiniteActivation) throw;
            row.diverged = true;
            row.classifier_val_top1 = std::numeric_limits<double>::quiet_NaN();
            row.fused_val_top1 = std::numeric_limits<double>::quiet_NaN();
            row.best_lambda = std::numeric_limits<double>::quiet_NaN();
        }
        row.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });

    auto select = [&](bool want_zero_alpha, bool want_positive_alpha, bool fused)
        -> std::optional<JointSelection> {
        std::optional<JointSelection> best;
        for (std::size_t r = 0; r < result.table.size(); ++r) {
            const auto& row = result.table[r];
            if (row.diverged) continue;
            const bool zero = row.alpha == 0.0;
            if ((zero && !want_zero_alpha) || (!zero && !want_positive_alpha)) continue;
            const double acc = fused ? row.fused_val_top1 : row.classifier_val_top1;
            if (!best || acc > best->val_top1) best = JointSelection{r, fused ? row.best_lambda : 0.0, acc};
        }
        return best;
    };
    result.base = select(true, false, false);
    result.base_prime = select(false, true, false);
    result.joint_inf = select(true, false, true);
    result.joint = select(true, true, true);

    auto keep = [&](const std::optional<JointSelection>& s) -> std::optional<Model> {
        if (!s) return std::nullopt;
        return models[s->row];
    };
    result.base_model = keep(result.base);
    result.base_prime_model = keep(result.base_prime);
    result.joint_inf_model = keep(result.joint_inf);
    result.joint_model = keep(result.joint);
    return result;
}

std::string joint_report_csv(const JointTuneResult& result) {
    std::string out =
        "k,k_resolved,tau,lr,wd,alpha,factor,gamma,status,classifier_val_top1,best_lambda,val_top1,train_seconds\n";
    for (const auto& r : result.table) {
        out += r.k.to_string() + "," + std::to_string(r.k_resolved) + "," + fmt(r.tau) + "," + fmt(r.lr) + "," +
               fmt(r.wd) + "," + fmt(r.alpha) + "," + to_string(r.factor) + "," + fmt(r.gamma) + "," +
               (r.diverged ? "diverged" : "ok") + "," + fmt(r.classifier_val_top1) + "," + fmt(r.best_lambda) +
               "," + fmt(r.fused_val_top1) + "," + fmt(r.runtime_seconds) + "\n";
    }
    return out;
}

std::string knn_report_csv(const KnnTuneResult& result) {
    std::string out = "k,k_resolved,tau,val_top1\n";
    for (const auto& r : result.table) {
        out += r.k.to_string() + "," + std::to_string(r.k_resolved) + "," + fmt(r.tau) + "," + fmt(r.val_top1) + "\n";
    }
    return out;
}

}  // namespace knnfuse

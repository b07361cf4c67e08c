#include "cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "knnfuse/checkpoint.hpp"
#include "knnfuse/error.hpp"
#include "knnfuse/evalreport.hpp"
#include "knnfuse/featurestore.hpp"
#include "knnfuse/fusion.hpp"
#include "knnfuse/knn.hpp"
#include "knnfuse/manifest.hpp"
#include "knnfuse/parallel.hpp"
#include "knnfuse/parametric.hpp"
#include "knnfuse/pipeline.hpp"
#include "knnfuse/rng.hpp"
#include "knnfuse/tuning.hpp"

namespace knnfuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flag values that fail to parse are usage errors (exit 2), not runtime errors.
template <typename F>
auto as_usage(const std::string& flag, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw CLI::ValidationError(flag, e.what());
    }
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
    std::vector<T> out;
    if (text.empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        T value{};
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
        if (ec != std::errc() || p != item.data() + item.size()) {
            throw Error(ErrorCode::InvalidArgument, "cannot parse list item '" + item + "'");
        }
        out.push_back(value);
    }
    return out;
}

std::vector<std::string> parse_names(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

FeatureBank load_fbnk(const fs::path& path) {
    const auto ext = path.extension().string();
    return load_bank(path, ext == ".csv" ? BankFormat::Csv : BankFormat::Bin);
}

void write_predictions(const fs::path& path, const FeatureBank& queries, const Predictions& preds) {
    std::string out;
    for (std::size_t i = 0; i < preds.probs.size(); ++i) {
        json row;
        row["id"] = queries.id(i);
        row["probs"] = preds.probs[i];
        row["top1"] = preds.top1[i];
        out += row.dump() + "\n";
    }
    write_text_file(path, out);
}

struct LoadedPredictions {
    std::vector<std::string> ids;
    std::vector<ProbDist> probs;
};

LoadedPredictions read_predictions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    LoadedPredictions out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto row = json::parse(line);
            out.ids.push_back(row.at("id").get<std::string>());
            out.probs.push_back(row.at("probs").get<ProbDist>());
        } catch (const json::exception& e) {
            throw Error(ErrorCode::MalformedHeader, std::string("predictions: ") + e.what());
        }
    }
    return out;
}

// Options shared by the k-NN-aware subcommands.
struct KnnOptions {
    std::string k = "128";
    double tau = 0.06;
    std::string metric = "sqeuclidean";

    void add(CLI::App* app) {
        app->add_option("--k", k, "Neighbors: positive integer or 'mean' (images per class)");
        app->add_option("--tau", tau, "Temperature for exp(-d/tau)")->check(CLI::PositiveNumber);
        app->add_option("--metric", metric, "sqeuclidean | cosine")
            ->check(CLI::IsMember({"sqeuclidean", "cosine"}));
    }

    KnnConfig resolve() const {
        return KnnConfig{as_usage("--k", [&] { return KSpec::parse(k); }), tau, parse_metric(metric)};
    }
};

struct TrainOptions {
    double alpha = 0.0;
    std::string factor = "nll";
    double gamma = 2.0;
    double lr = 0.1;
    double wd = 1e-4;
    std::size_t epochs = 100;
    std::size_t warmup = 10;
    std::size_t batch = 256;
    double momentum = 0.9;
    double prior = 0.01;
    std::string hidden;

    void add(CLI::App* app, bool with_loss) {
        if (with_loss) {
            app->add_option("--alpha", alpha, "Weight of the k-NN modulating factor")->check(CLI::NonNegativeNumber);
            app->add_option("--factor", factor, "nll | focal")->check(CLI::IsMember({"nll", "focal"}));
            app->add_option("--gamma", gamma, "Focal exponent")->check(CLI::NonNegativeNumber);
            app->add_option("--lr", lr, "Base learning rate (scaled by batch/256)")->check(CLI::PositiveNumber);
            app->add_option("--wd", wd, "L2 weight decay on weights")->check(CLI::NonNegativeNumber);
        }
        app->add_option("--epochs", epochs, "Total epochs")->check(CLI::PositiveNumber);
        app->add_option("--warmup", warmup, "Linear warmup epochs");
        app->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
        app->add_option("--momentum", momentum, "SGD momentum");
        app->add_option("--prior", prior, "Prior probability for the final bias init");
        app->add_option("--hidden", hidden, "Comma-separated hidden widths (empty = linear)");
    }

    OptimizerConfig optimizer(std::uint64_t seed) const {
        OptimizerConfig opt;
        opt.base_lr = lr;
        opt.weight_decay = wd;
        opt.total_epochs = epochs;
        opt.warmup_epochs = warmup;
        opt.batch_size = batch;
        opt.momentum = momentum;
        opt.prior_pi = prior;
        opt.seed = seed;
        return opt;
    }

    LossConfig loss() const {
        LossConfig l;
        l.alpha = alpha;
        l.factor = parse_factor(factor);
        l.gamma = gamma;
        return l;
    }
};

struct Context {
    std::size_t threads = 0;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------

void cmd_ingest(const fs::path& in, const std::string& in_format, const fs::path& out,
                const std::string& out_format, std::optional<std::uint32_t> classes) {
    const auto bank = load_bank(in, parse_bank_format(in_format), classes);
    write_bank(bank, out, parse_bank_format(out_format));
    json config = {{"in_format", in_format}, {"out_format", out_format}};
    if (classes) config["classes"] = *classes;
    write_manifest(out, make_manifest("ingest", config, json::object(), {in}, {out}));
    std::cout << "ingest: n=" << bank.size() << " D=" << bank.dim() << " C=" << bank.class_count() << "\n";
}

void cmd_split(const Context& ctx, const fs::path& bank_path, const std::string& fractions, bool no_stratify,
               double fraction, const std::string& prefix) {
    const auto parts = as_usage("--split", [&] { return parse_list<double>(fractions); });
    if (parts.size() != 2) throw CLI::ValidationError("--split", "expects 'train,val' fractions");
    FeatureBank bank = load_fbnk(bank_path);
    const std::uint64_t sub_seed = derive_seed(ctx.seed, "subsample");
    const std::uint64_t split_seed = derive_seed(ctx.seed, "split");
    if (fraction < 1.0) bank = subsample(bank, fraction, sub_seed);

    SplitSpec spec{parts[0], parts[1], split_seed, !no_stratify};
    const auto banks = split(bank, spec);
    std::vector<fs::path> outputs = {prefix + "_train.fbnk", prefix + "_val.fbnk"};
    write_bank(banks.train, outputs[0], BankFormat::Bin);
    write_bank(banks.val, outputs[1], BankFormat::Bin);
    if (banks.test) {
        outputs.emplace_back(prefix + "_test.fbnk");
        write_bank(*banks.test, outputs[2], BankFormat::Bin);
    }
    json config = {{"train_fraction", parts[0]}, {"val_fraction", parts[1]},
                   {"stratified", !no_stratify}, {"fraction", fraction}};
    json seeds = {{"master", ctx.seed}, {"split", split_seed}, {"subsample", sub_seed}};
    write_manifest(prefix, make_manifest("split", config, seeds, {bank_path}, outputs));
    std::cout << "split: train=" << banks.train.size() << " val=" << banks.val.size()
              << " test=" << (banks.test ? banks.test->size() : 0) << "\n";
}

void cmd_knn(const Context& ctx, const fs::path& bank_path, const fs::path& queries_path, const KnnOptions& ko,
             const std::string& recipe, const fs::path& out) {
    const KnnConfig cfg = ko.resolve();
    const FeatureBank raw_bank = load_fbnk(bank_path);
    const FeatureBank raw_queries = load_fbnk(queries_path);
    const auto stats = fit_preprocess(raw_bank, parse_recipe(recipe));
    const FeatureBank bank = apply_preprocess(raw_bank, stats);
    const FeatureBank queries = apply_preprocess(raw_queries, stats);
    const KnnIndex index(bank, cfg.metric);
    const auto preds = predict(queries.features(), PredictMode::Knn, FusionConfig{0.0, cfg}, nullptr, &index,
                               resolve_threads(ctx.threads));
    write_predictions(out, queries, preds);
    json config = {{"k", cfg.k.to_string()}, {"k_resolved", resolve_k(cfg.k, bank)}, {"tau", cfg.tau},
                   {"metric", to_string(cfg.metric)}, {"recipe", recipe}};
    write_manifest(out, make_manifest("knn", config, json::object(), {bank_path, queries_path}, {out}));
}

void cmd_train(const Context& ctx, const fs::path& bank_path, const std::optional<fs::path>& val_path,
               const KnnOptions& ko, const TrainOptions& to, const std::string& recipe, const fs::path& out) {
    const KnnConfig knn = ko.resolve();
    const FeatureBank raw = load_fbnk(bank_path);
    const auto stats = fit_preprocess(raw, parse_recipe(recipe));
    const FeatureBank bank = apply_preprocess(raw, stats);
    std::optional<FeatureBank> val;
    if (val_path) val = apply_preprocess(load_fbnk(*val_path), stats);

    const LossConfig loss = to.loss();
    const OptimizerConfig opt = to.optimizer(derive_seed(ctx.seed, "train"));
    std::vector<double> p_gt(bank.size(), 1.0);
    if (loss.alpha > 0.0) p_gt = loo_posteriors(bank, knn, resolve_threads(ctx.threads)).p_gt;

    const auto hidden = as_usage("--hidden", [&] { return parse_list<std::size_t>(to.hidden); });
    const Model init = init_model(bank.dim(), bank.class_count(), hidden, opt.seed, opt.prior_pi);
    const auto result = knnfuse::train(init, bank, p_gt, loss, opt, val ? &*val : nullptr);

    json config = {{"alpha", loss.alpha}, {"factor", to_string(loss.factor)}, {"gamma", loss.gamma},
                   {"k", knn.k.to_string()}, {"tau", knn.tau}, {"metric", to_string(knn.metric)},
                   {"lr", opt.base_lr}, {"wd", opt.weight_decay}, {"epochs", opt.total_epochs},
                   {"warmup", opt.warmup_epochs}, {"batch_size", opt.batch_size}, {"momentum", opt.momentum},
                   {"prior_pi", opt.prior_pi}, {"hidden", hidden}, {"recipe", recipe}};
    write_checkpoint(Checkpoint{result.model, stats, config, opt.seed}, out);

    json log = json::array();
    for (const auto& e : result.log) {
        json entry = {{"epoch", e.epoch}, {"train_loss", e.train_loss}};
        if (e.val_top1) entry["val_top1"] = *e.val_top1;
        log.push_back(entry);
    }
    const fs::path log_path = out.string() + ".log.json";
    write_text_file(log_path, log.dump(2) + "\n");

    std::vector<fs::path> inputs = {bank_path};
    if (val_path) inputs.push_back(*val_path);
    json seeds = {{"master", ctx.seed}, {"train", opt.seed}};
    write_manifest(out, make_manifest("train", config, seeds, inputs, {out, log_path}));
    const auto& last = result.log.back();
    std::cout << "train: epochs=" << last.epoch << " final_loss=" << last.train_loss;
    if (last.val_top1) std::cout << " val_top1=" << *last.val_top1;
    std::cout << "\n";
}

void cmd_predict(const Context& ctx, const std::string& mode_name, const std::optional<fs::path>& model_path,
                 const std::optional<fs::path>& bank_path, const fs::path& queries_path, double lambda,
                 CLI::App* sub, const KnnOptions& ko, const std::string& recipe, const fs::path& out) {
    const PredictMode mode = parse_mode(mode_name);
    if (mode != PredictMode::Knn && !model_path) throw CLI::RequiredError("--model");
    if (mode != PredictMode::Base && !bank_path) throw CLI::RequiredError("--bank");

    std::optional<Checkpoint> ckpt;
    if (model_path) ckpt = read_checkpoint(*model_path);

    // k/tau/metric default to the values the classifier was trained with.
    KnnOptions eff = ko;
    if (ckpt) {
        const auto& c = ckpt->config;
        if (sub->count("--k") == 0 && c.contains("k")) eff.k = c["k"].get<std::string>();
        if (sub->count("--tau") == 0 && c.contains("tau")) eff.tau = c["tau"].get<double>();
        if (sub->count("--metric") == 0 && c.contains("metric")) eff.metric = c["metric"].get<std::string>();
    }
    const KnnConfig knn = eff.resolve();

    std::optional<FeatureBank> raw_bank;
    if (bank_path) raw_bank = load_fbnk(*bank_path);
    const PreprocessStats stats =
        ckpt ? ckpt->preprocess : fit_preprocess(*raw_bank, parse_recipe(recipe));
    const FeatureBank raw_queries = load_fbnk(queries_path);
    const FeatureBank queries = apply_preprocess(raw_queries, stats);

    std::optional<FeatureBank> bank;
    std::optional<KnnIndex> index;
    if (raw_bank && mode != PredictMode::Base) {
        bank = apply_preprocess(*raw_bank, stats);
        index.emplace(*bank, knn.metric);
    }
    const auto preds = predict(queries.features(), mode, FusionConfig{lambda, knn}, ckpt ? &ckpt->model : nullptr,
                               index ? &*index : nullptr, resolve_threads(ctx.threads));
    write_predictions(out, raw_queries, preds);

    json config = {{"mode", to_string(mode)}, {"lambda", lambda}, {"k", knn.k.to_string()}, {"tau", knn.tau},
                   {"metric", to_string(knn.metric)}, {"recipe", to_string(stats.recipe)}};
    std::vector<fs::path> inputs;
    if (model_path) inputs.push_back(*model_path);
    if (bank_path) inputs.push_back(*bank_path);
    inputs.push_back(queries_path);
    write_manifest(out, make_manifest("predict", config, json::object(), inputs, {out}));
}

void cmd_grid(const Context& ctx, const std::string& task, const fs::path& train_path, const fs::path& val_path,
              const std::optional<fs::path>& grids_path, bool lambda_zero, bool alpha_zero, bool full_product,
              const std::string& metric, const std::string& recipe, const TrainOptions& to, const fs::path& out) {
    GridSpec grid = GridSpec::defaults();
    if (grids_path) {
        std::ifstream in(*grids_path);
        if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + grids_path->string());
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw CLI::ValidationError("--grids", e.what());
        }
        grid = as_usage("--grids", [&] { return GridSpec::from_json(j); });
    }
    if (lambda_zero) grid.include_zero_lambda();
    if (alpha_zero) grid.include_zero_alpha();

    const FeatureBank raw_train = load_fbnk(train_path);
    const auto stats = fit_preprocess(raw_train, parse_recipe(recipe));
    const FeatureBank train = apply_preprocess(raw_train, stats);
    const FeatureBank val = apply_preprocess(load_fbnk(val_path), stats);
    const std::size_t threads = resolve_threads(ctx.threads);

    json best;
    json config = {{"task", task}, {"grids", grid.to_json()}, {"metric", metric}, {"recipe", recipe}};
    if (task == "knn") {
        const auto r = tune_knn(train, val, grid, parse_metric(metric), threads);
        write_text_file(out, knn_report_csv(r));
        best = {{"k", r.best_k.to_string()}, {"k_resolved", r.best_k_resolved}, {"tau", r.best_tau},
                {"val_top1", r.best_val_top1}};
    } else if (task == "joint") {
        JointTuneOptions opts;
        opts.opt = to.optimizer(derive_seed(ctx.seed, "train"));
        opts.hidden = as_usage("--hidden", [&] { return parse_list<std::size_t>(to.hidden); });
        opts.metric = parse_metric(metric);
        opts.full_product = full_product;
        opts.threads = threads;
        config["epochs"] = to.epochs;
        config["warmup"] = to.warmup;
        config["batch_size"] = to.batch;
        config["hidden"] = opts.hidden;
        config["full_product"] = full_product;
        const auto r = tune_joint(train, val, grid, opts);
        write_text_file(out, joint_report_csv(r));
        auto describe = [&](const std::optional<JointSelection>& s) -> json {
            if (!s) return nullptr;
            const auto& row = r.table[s->row];
            return {{"row", s->row}, {"k", row.k.to_string()}, {"k_resolved", row.k_resolved},
                    {"tau", row.tau}, {"lr", row.lr}, {"wd", row.wd}, {"alpha", row.alpha},
                    {"factor", to_string(row.factor)}, {"gamma", row.gamma}, {"lambda", s->lambda},
                    {"val_top1", s->val_top1}};
        };
        best = {{"base", describe(r.base)}, {"base_prime", describe(r.base_prime)},
                {"jointinf", describe(r.joint_inf)}, {"joint", describe(r.joint)}};
        if (r.knn) {
            best["knn"] = {{"k", r.knn->best_k.to_string()}, {"tau", r.knn->best_tau},
                           {"val_top1", r.knn->best_val_top1}};
        }
    } else {
        throw CLI::ValidationError("--task", "must be knn or joint");
    }
    const fs::path best_path = out.string() + ".best.json";
    write_text_file(best_path, best.dump(2) + "\n");
    json seeds = {{"master", ctx.seed}, {"train", derive_seed(ctx.seed, "train")}};
    std::vector<fs::path> inputs = {train_path, val_path};
    if (grids_path) inputs.push_back(*grids_path);
    write_manifest(out, make_manifest("grid", config, seeds, inputs, {out, best_path}));
    std::cout << best.dump(2) << "\n";
}

void cmd_eval(const fs::path& preds_path, const fs::path& truth_path, const fs::path& out,
              const std::string& pr_classes, const std::string& mode, const std::string& format) {
    const auto preds = read_predictions(preds_path);
    const FeatureBank truth = load_fbnk(truth_path);
    if (preds.ids.size() != truth.size()) {
        throw Error(ErrorCode::LengthMismatch, "predictions=" + std::to_string(preds.ids.size()) +
                                                   " truth=" + std::to_string(truth.size()));
    }
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (preds.ids[i] != truth.id(i)) {
            throw Error(ErrorCode::InvalidArgument, "id mismatch at row " + std::to_string(i) + ": " +
                                                        preds.ids[i] + " vs " + truth.id(i));
        }
    }
    const auto classes = as_usage("--pr-classes", [&] { return parse_list<std::uint32_t>(pr_classes); });
    for (auto c : classes) {
        if (c >= truth.class_count()) throw Error(ErrorCode::LabelOutOfRange, "--pr-classes entry out of range");
    }
    const auto report = evaluate(preds.probs, truth.labels(), truth.class_count(), mode,
                                 json{{"preds", preds_path.string()}}, classes);
    write_report(report, out, format == "csv" ? ReportFormat::Csv : ReportFormat::Json);
    write_manifest(out, make_manifest("eval", {{"pr_classes", classes}, {"mode", mode}, {"format", format}},
                                      json::object(), {preds_path, truth_path}, {out}));
    std::cout << "eval: n=" << report.n_eval << " top1=" << report.top1 << "\n";
}

void cmd_ablate(const Context& ctx, const fs::path& train_path, const fs::path& test_path,
                const std::string& fractions, const std::string& sweeps, const KnnOptions& ko,
                const TrainOptions& to, double lambda, const std::string& recipe, const fs::path& out_dir) {
    PipelineConfig cfg;
    cfg.recipe = parse_recipe(recipe);
    cfg.knn = ko.resolve();
    cfg.loss = to.loss();
    cfg.opt = to.optimizer(derive_seed(ctx.seed, "train"));
    cfg.hidden = as_usage("--hidden", [&] { return parse_list<std::size_t>(to.hidden); });
    cfg.lambda = lambda;
    cfg.threads = resolve_threads(ctx.threads);

    const auto fracs = as_usage("--fractions", [&] { return parse_list<double>(fractions); });
    std::vector<AblationSweep> sw;
    for (const auto& name : parse_names(sweeps)) sw.push_back(as_usage("--sweeps", [&] { return parse_sweep(name); }));
    if (fracs.empty()) throw CLI::ValidationError("--fractions", "needs at least one value");
    if (sw.empty()) throw CLI::ValidationError("--sweeps", "needs at least one sweep");

    const FeatureBank train = load_fbnk(train_path);
    const FeatureBank test = load_fbnk(test_path);
    const std::uint64_t ablate_seed = derive_seed(ctx.seed, "ablate");
    const auto points = ablate(train, test, fracs, sw, cfg, ablate_seed);

    fs::create_directories(out_dir);
    std::vector<fs::path> outputs;
    std::string summary = "sweep,fraction,base_top1,knn_top1,jointinf_top1,joint_top1\n";
    for (const auto& p : points) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_%.2f.json", to_string(p.sweep).c_str(), p.fraction);
        outputs.push_back(out_dir / name);
        write_report(p.result.joint_report, outputs.back(), ReportFormat::Json);
        summary += to_string(p.sweep) + "," + json(p.fraction).dump() + "," + json(p.result.base_top1).dump() + "," +
                   json(p.result.knn_top1).dump() + "," + json(p.result.joint_inf_top1).dump() + "," +
                   json(p.result.joint_top1).dump() + "\n";
    }
    outputs.push_back(out_dir / "summary.csv");
    write_text_file(outputs.back(), summary);
    json config = cfg.to_json();
    config["fractions"] = fracs;
    config["sweeps"] = parse_names(sweeps);
    json seeds = {{"master", ctx.seed}, {"train", cfg.opt.seed}, {"ablate", ablate_seed}};
    write_manifest(out_dir / "ablate", make_manifest("ablate", config, seeds, {train_path, test_path}, outputs));
    std::cout << summary;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"knnfuse: k-NN augmented softmax classifiers over precomputed features", "knnfuse"};
    app.require_subcommand(1);
    app.fallthrough();
    Context ctx;
    app.add_option("--threads", ctx.threads, "Worker threads (default: KNNFUSE_THREADS or all cores)");
    app.add_option("--seed", ctx.seed, "Master seed; every stage derives its own sub-seed");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Convert a feature bank between CSV and BIN");
    std::string in_path, in_format = "csv", out_format = "bin";
    std::string out_path;
    std::optional<std::uint32_t> classes;
    ingest->add_option("--in", in_path, "Input bank")->required();
    ingest->add_option("--format", in_format, "Input format: csv | bin")->check(CLI::IsMember({"csv", "bin"}));
    ingest->add_option("--out", out_path, "Output bank")->required();
    ingest->add_option("--out-format", out_format, "Output format: csv | bin")->check(CLI::IsMember({"csv", "bin"}));
    ingest->add_option("--classes", classes, "Class count for CSV input (default max label + 1)");

    // split
    auto* split_cmd = app.add_subcommand("split", "Stratified train/val/test split of a bank");
    std::string split_bank, split_fracs = "0.9,0.1", split_prefix;
    bool no_stratify = false;
    double split_fraction = 1.0;
    split_cmd->add_option("--bank", split_bank, "Input bank (.fbnk or .csv)")->required();
    split_cmd->add_option("--split", split_fracs, "train,val fractions; the remainder is test");
    split_cmd->add_flag("--no-stratify", no_stratify, "Split without preserving class proportions");
    split_cmd->add_option("--fraction", split_fraction, "Subsample the bank to this fraction first")
        ->check(CLI::Range(0.0, 1.0));
    split_cmd->add_option("--out-prefix", split_prefix, "Writes <prefix>_{train,val,test}.fbnk")->required();

    // knn
    auto* knn_cmd = app.add_subcommand("knn", "k-NN posteriors for queries against a bank");
    std::string knn_bank, knn_queries, knn_out, knn_recipe = "l2center";
    KnnOptions knn_opts;
    knn_cmd->add_option("--bank", knn_bank, "Datastore bank")->required();
    knn_cmd->add_option("--queries", knn_queries, "Query bank")->required();
    knn_opts.add(knn_cmd);
    knn_cmd->add_option("--recipe", knn_recipe, "l2center | centerl2 | none");
    knn_cmd->add_option("--out", knn_out, "Predictions (JSON lines)")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a classifier with the k-NN weighted loss");
    std::string train_bank, train_out, train_recipe = "l2center";
    std::optional<std::string> train_val;
    KnnOptions train_knn;
    TrainOptions train_opts;
    train_cmd->add_option("--bank", train_bank, "Training bank")->required();
    train_cmd->add_option("--val", train_val, "Validation bank (logged per epoch)");
    train_knn.add(train_cmd);
    train_opts.add(train_cmd, true);
    train_cmd->add_option("--recipe", train_recipe, "l2center | centerl2 | none");
    train_cmd->add_option("--out", train_out, "Checkpoint path")->required();

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "Predict with base, knn, jointinf or joint");
    std::string predict_mode = "joint", predict_queries, predict_out, predict_recipe = "l2center";
    std::optional<std::string> predict_model, predict_bank;
    double predict_lambda = 0.5;
    KnnOptions predict_knn;
    predict_cmd->add_option("--mode", predict_mode, "base | knn | jointinf | joint")
        ->check(CLI::IsMember({"base", "knn", "jointinf", "joint"}));
    predict_cmd->add_option("--model", predict_model, "Classifier checkpoint");
    predict_cmd->add_option("--bank", predict_bank, "k-NN datastore (the training bank)");
    predict_cmd->add_option("--queries", predict_queries, "Query bank")->required();
    predict_cmd->add_option("--lambda", predict_lambda, "Interpolation weight of the k-NN posterior")
        ->check(CLI::Range(0.0, 1.0));
    predict_knn.add(predict_cmd);
    predict_cmd->add_option("--recipe", predict_recipe, "Used only without a checkpoint");
    predict_cmd->add_option("--out", predict_out, "Predictions (JSON lines)")->required();

    // grid
    auto* grid_cmd = app.add_subcommand("grid", "Hyperparameter search on the validation split");
    std::string grid_task = "joint", grid_train, grid_val, grid_out, grid_metric = "sqeuclidean",
                grid_recipe = "l2center";
    std::optional<std::string> grid_file;
    bool lambda_zero = false, alpha_zero = false, full_product = false;
    TrainOptions grid_opts;
    grid_cmd->add_option("--task", grid_task, "knn | joint")->check(CLI::IsMember({"knn", "joint"}));
    grid_cmd->add_option("--train", grid_train, "Training bank")->required();
    grid_cmd->add_option("--val", grid_val, "Validation bank")->required();
    grid_cmd->add_option("--grids", grid_file, "grids.json (keys k, tau, alpha, lambda, lr, wd, factor, gamma)");
    grid_cmd->add_flag("--lambda-include-zero", lambda_zero, "Add lambda = 0 to the lambda grid");
    grid_cmd->add_flag("--alpha-include-zero", alpha_zero, "Add alpha = 0 (plain cross-entropy) runs");
    grid_cmd->add_flag("--full-product", full_product, "Search (k, tau) jointly with the training grid");
    grid_cmd->add_option("--metric", grid_metric, "sqeuclidean | cosine")
        ->check(CLI::IsMember({"sqeuclidean", "cosine"}));
    grid_cmd->add_option("--recipe", grid_recipe, "l2center | centerl2 | none");
    grid_opts.add(grid_cmd, false);
    grid_cmd->add_option("--out", grid_out, "report.csv")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Top-1, confusion counts and per-class PR curves");
    std::string eval_preds, eval_truth, eval_out, eval_classes, eval_mode = "unknown", eval_format = "json";
    eval_cmd->add_option("--preds", eval_preds, "Predictions (JSON lines)")->required();
    eval_cmd->add_option("--truth", eval_truth, "Bank holding the true labels")->required();
    eval_cmd->add_option("--out", eval_out, "Report path")->required();
    eval_cmd->add_option("--pr-classes", eval_classes, "Comma-separated classes for PR curves");
    eval_cmd->add_option("--mode", eval_mode, "Label recorded in the report");
    eval_cmd->add_option("--format", eval_format, "json | csv")->check(CLI::IsMember({"json", "csv"}));

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "Data-size ablation over classifier and datastore fractions");
    std::string ab_train, ab_test, ab_fracs = "0.2,0.4,0.6,0.8,1.0", ab_sweeps = "classifier,datastore",
                ab_recipe = "l2center", ab_out;
    double ab_lambda = 0.5;
    KnnOptions ab_knn;
    TrainOptions ab_opts;
    ablate_cmd->add_option("--train", ab_train, "Full training bank")->required();
    ablate_cmd->add_option("--test", ab_test, "Test bank")->required();
    ablate_cmd->add_option("--fractions", ab_fracs, "Comma-separated fractions in (0, 1]");
    ablate_cmd->add_option("--sweeps", ab_sweeps, "classifier,datastore");
    ablate_cmd->add_option("--lambda", ab_lambda, "Interpolation weight")->check(CLI::Range(0.0, 1.0));
    ab_knn.add(ablate_cmd);
    ab_opts.add(ablate_cmd, true);
    ablate_cmd->add_option("--recipe", ab_recipe, "l2center | centerl2 | none");
    ablate_cmd->add_option("--out-dir", ab_out, "Directory for per-point reports")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*ingest) {
            cmd_ingest(in_path, in_format, out_path, out_format, classes);
        } else if (*split_cmd) {
            cmd_split(ctx, split_bank, split_fracs, no_stratify, split_fraction, split_prefix);
        } else if (*knn_cmd) {
            cmd_knn(ctx, knn_bank, knn_queries, knn_opts, knn_recipe, knn_out);
        } else if (*train_cmd) {
            std::optional<fs::path> val;
            if (train_val) val = *train_val;
            cmd_train(ctx, train_bank, val, train_knn, train_opts, train_recipe, train_out);
        } else if (*predict_cmd) {
            std::optional<fs::path> model, bank;
            if (predict_model) model = *predict_model;
            if (predict_bank) bank = *predict_bank;
            cmd_predict(ctx, predict_mode, model, bank, predict_queries, predict_lambda, predict_cmd, predict_knn,
                        predict_recipe, predict_out);
        } else if (*grid_cmd) {
            std::optional<fs::path> grids;
            if (grid_file) grids = *grid_file;
            cmd_grid(ctx, grid_task, grid_train, grid_val, grids, lambda_zero, alpha_zero, full_product,
                     grid_metric, grid_recipe, grid_opts, grid_out);
        } else if (*eval_cmd) {
            cmd_eval(eval_preds, eval_truth, eval_out, eval_classes, eval_mode, eval_format);
        } else if (*ablate_cmd) {
            cmd_ablate(ctx, ab_train, ab_test, ab_fracs, ab_sweeps, ab_knn, ab_opts, ab_lambda, ab_recipe, ab_out);
        }
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        const auto active = app.get_subcommands();
        std::cerr << (active.empty() ? app.help() : active.front()->help());
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("knnfuse");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace knnfuse::cli

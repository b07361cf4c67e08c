#include "knnfuse/evalreport.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>

#include "knnfuse/error.hpp"

namespace knnfuse {

double top1(std::span<const std::uint32_t> preds, std::span<const std::uint32_t> truth) {
    if (preds.empty() || preds.size() != truth.size()) {
        throw Error(ErrorCode::LengthMismatch, "preds=" + std::to_string(preds.size()) +
                                                   " truth=" + std::to_string(truth.size()));
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == truth[i];
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

std::vector<PrPoint> pr_curve(std::span<const ProbDist> scores, std::span<const std::uint32_t> truth,
                              std::uint32_t c) {
    if (scores.empty() || scores.size() != truth.size()) {
        throw Error(ErrorCode::LengthMismatch, "scores=" + std::to_string(scores.size()) +
                                                   " truth=" + std::to_string(truth.size()));
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    for (const auto& s : scores) {
        if (c >= s.size()) throw Error(ErrorCode::LabelOutOfRange, "class outside score vectors");
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a][c] > scores[b][c]; });

    std::size_t positives = 0;
    for (auto t : truth) positives += t == c;

    std::vector<PrPoint> out;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double threshold = scores[order[i]][c];
        for (; i < order.size() && scores[order[i]][c] == threshold; ++i) {
            if (truth[order[i]] == c) ++tp; else ++fp;
        }
        PrPoint p;
        p.threshold = threshold;
        p.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
        p.recall = positives == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(positives);
        out.push_back(p);
    }
    return out;
}

EvalReport evaluate(std::span<const ProbDist> probs, std::span<const std::uint32_t> truth,
                    std::uint32_t class_count, std::string mode, nlohmann::json config,
                    std::span<const std::uint32_t> pr_classes) {
    if (probs.empty() || probs.size() != truth.size()) {
        throw Error(ErrorCode::LengthMismatch, "probs=" + std::to_string(probs.size()) +
                                                   " truth=" + std::to_string(truth.size()));
    }
    EvalReport r;
    r.mode = std::move(mode);
    r.config = std::move(config);
    r.class_count = class_count;
    r.n_eval = probs.size();
    r.confusion.assign(class_count, std::vector<std::size_t>(class_count, 0));
    std::vector<std::uint32_t> preds;
    preds.reserve(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i].size() != class_count || truth[i] >= class_count) {
            throw Error(ErrorCode::DimensionMismatch, "prediction " + std::to_string(i) + " has wrong class count");
        }
        preds.push_back(argmax(probs[i]));
        ++r.confusion[truth[i]][preds.back()];
        r.n_correct += preds.back() == truth[i];
    }
    r.top1 = top1(preds, truth);
    for (auto c : pr_classes) r.per_class_pr[c] = pr_curve(probs, truth, c);
    return r;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["mode"] = r.mode;
    j["config"] = r.config;
    j["n_eval"] = r.n_eval;
    j["n_correct"] = r.n_correct;
    j["top1"] = r.top1;
    j["class_count"] = r.class_count;
    j["confusion"] = r.confusion;
    nlohmann::json pr = nlohmann::json::object();
    for (const auto& [c, points] : r.per_class_pr) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& p : points) {
            arr.push_back({{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}});
        }
        pr[std::to_string(c)] = std::move(arr);
    }
    j["per_class_pr"] = std::move(pr);
    return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        r.mode = j.at("mode").get<std::string>();
        r.config = j.at("config");
        r.n_eval = j.at("n_eval").get<std::size_t>();
        r.n_correct = j.at("n_correct").get<std::size_t>();
        r.top1 = j.at("top1").get<double>();
        r.class_count = j.at("class_count").get<std::uint32_t>();
        r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
        for (const auto& [key, arr] : j.at("per_class_pr").items()) {
            auto& points = r.per_class_pr[static_cast<std::uint32_t>(std::stoul(key))];
            for (const auto& p : arr) {
                points.push_back({p.at("threshold").get<double>(), p.at("precision").get<double>(),
                                  p.at("recall").get<double>()});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedHeader, std::string("report: ") + e.what());
    }
    return r;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.empty()) throw Error(ErrorCode::IoFailure, "empty output path");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

namespace {

std::string csv_cell(const nlohmann::json& v) {
    std::string s = v.is_string() ? v.get<std::string>() : v.dump();
    if (s.find_first_of(",\"\n") != std::string::npos) {
        std::string quoted = "\"";
        for (char ch : s) {
            if (ch == '"') quoted += '"';
            quoted += ch;
        }
        return quoted + "\"";
    }
    return s;
}

}  // namespace

void write_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
    if (format == ReportFormat::Json) {
        write_text_file(path, to_json(report).dump(2) + "\n");
        return;
    }
    std::vector<std::pair<std::string, nlohmann::json>> cols = {
        {"mode", report.mode},
        {"n_eval", report.n_eval},
        {"n_correct", report.n_correct},
        {"top1", report.top1},
        {"class_count", report.class_count},
    };
    if (report.config.is_object()) {
        for (const auto& [key, value] : report.config.items()) {
            if (value.is_primitive()) cols.emplace_back("config." + key, value);
        }
    }
    std::string header, row;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        header += (i ? "," : "") + cols[i].first;
        row += (i ? "," : "") + csv_cell(cols[i].second);
    }
    write_text_file(path, header + "\n" + row + "\n");
}

EvalReport read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    try {
        return report_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::MalformedHeader, std::string("report: ") + e.what());
    }
}

}  // namespace knnfuse

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "knnfuse/probdist.hpp"

namespace knnfuse {

/// correct / n. Throws LengthMismatch on empty or misaligned input.
double top1(std::span<const std::uint32_t> preds, std::span<const std::uint32_t> truth);

struct PrPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;

    friend bool operator==(const PrPoint&, const PrPoint&) = default;
};

/// One-vs-rest precision/recall for class `c` scored by probs[c]. One point per
/// distinct score (equal scores form a single threshold), ordered by
/// descending threshold; a sample is predicted positive when its score is
/// >= the threshold. Recall is 0 for a class with no positives.
std::vector<PrPoint> pr_curve(std::span<const ProbDist> scores, std::span<const std::uint32_t> truth,
                              std::uint32_t c);

struct EvalReport {
    std::string mode;
    nlohmann::json config = nlohmann::json::object();
    std::size_t n_eval = 0;
    std::size_t n_correct = 0;
    double top1 = 0.0;
    std::uint32_t class_count = 0;
    std::map<std::uint32_t, std::vector<PrPoint>> per_class_pr;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport evaluate(std::span<const ProbDist> probs, std::span<const std::uint32_t> truth,
                    std::uint32_t class_count, std::string mode, nlohmann::json config,
                    std::span<const std::uint32_t> pr_classes = {});

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

enum class ReportFormat { Json, Csv };

/// JSON holds everything; CSV is one header line plus one row of top-level
/// scalars: mode,n_eval,n_correct,top1,class_count, then scalar config
/// entries as config.<key> in key order.
void write_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);
EvalReport read_report(const std::filesystem::path& path);

/// Writes `text` to `path`, mapping any failure to IoFailure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace knnfuse

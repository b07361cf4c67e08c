#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace knnfuse {

/// Read-only row-major view over a dense float matrix.
struct MatrixView {
    std::span<const float> data;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::span<const float> row(std::size_t i) const { return data.subspan(i * cols, cols); }
};

/// Labeled feature vectors: n rows of dimension D, labels in [0, C).
///
/// Immutable after construction; the constructor enforces every invariant
/// (n >= 1, D >= 1, C >= 2, labels in range, finite values, newline- and
/// comma-free ids), so any FeatureBank in hand is valid.
class FeatureBank {
public:
    FeatureBank(std::vector<float> features, std::size_t dim, std::vector<std::uint32_t> labels,
                std::uint32_t class_count, std::vector<std::string> ids);

    std::size_t size() const noexcept { return labels_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    std::uint32_t class_count() const noexcept { return class_count_; }

    MatrixView features() const noexcept { return {features_, size(), dim_}; }
    std::span<const float> row(std::size_t i) const { return features().row(i); }
    std::span<const float> raw() const noexcept { return features_; }
    std::span<const std::uint32_t> labels() const noexcept { return labels_; }
    std::uint32_t label(std::size_t i) const { return labels_[i]; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const std::string& id(std::size_t i) const { return ids_[i]; }

    /// Per-class sample counts (length C).
    std::vector<std::size_t> class_sizes() const;

    /// New bank made of the given rows, in the given order.
    FeatureBank select(std::span<const std::size_t> indices) const;

    /// Same labels and ids with replaced feature values (same shape).
    FeatureBank with_features(std::vector<float> features) const;

    friend bool operator==(const FeatureBank&, const FeatureBank&) = default;

private:
    std::vector<float> features_;
    std::size_t dim_;
    std::vector<std::uint32_t> labels_;
    std::uint32_t class_count_;
    std::vector<std::string> ids_;
};

enum class BankFormat { Bin, Csv };

BankFormat parse_bank_format(const std::string& name);

/// Loads a bank. CSV files carry no class count; it is taken from
/// `csv_class_count` when given, else max(label) + 1 (at least 2).
FeatureBank load_bank(const std::filesystem::path& path, BankFormat format,
                      std::optional<std::uint32_t> csv_class_count = std::nullopt);

void write_bank(const FeatureBank& bank, const std::filesystem::path& path, BankFormat format);

/// Serialized BIN size in bytes for a bank, from the byte layout.
std::size_t bin_size(const FeatureBank& bank);

// ---------------------------------------------------------------------------
// Preprocessing

enum class Recipe { L2ThenCenter, CenterThenL2, None };

Recipe parse_recipe(const std::string& name);
std::string to_string(Recipe recipe);

struct PreprocessStats {
    std::vector<double> mean;
    Recipe recipe = Recipe::L2ThenCenter;

    friend bool operator==(const PreprocessStats&, const PreprocessStats&) = default;
};

/// Fits the centering vector on the training bank only. The mean is taken over
/// the recipe's pre-centering representation (unit vectors for L2ThenCenter,
/// raw vectors otherwise), accumulated in double.
PreprocessStats fit_preprocess(const FeatureBank& train, Recipe recipe);

std::vector<double> apply_preprocess(std::span<const float> x, const PreprocessStats& stats);

/// Applies the transform to every row; result stored as float.
FeatureBank apply_preprocess(const FeatureBank& bank, const PreprocessStats& stats);

// ---------------------------------------------------------------------------
// Splitting and subsampling

struct SplitSpec {
    double train_fraction = 0.9;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    bool stratified = true;
};

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

struct SplitBanks {
    FeatureBank train;
    FeatureBank val;
    std::optional<FeatureBank> test;  // empty when fractions sum to 1
};

/// Disjoint partition of [0, n); each part sorted ascending.
SplitIndices split_indices(const FeatureBank& bank, const SplitSpec& spec);
SplitBanks split(const FeatureBank& bank, const SplitSpec& spec);

/// Stratified, nested subsample of ceil(fraction * n) rows, sorted ascending.
/// For a fixed seed the selection at a smaller fraction is a subset of the
/// selection at any larger fraction.
std::vector<std::size_t> subsample_indices(const FeatureBank& bank, double fraction,
                                           std::uint64_t seed);
FeatureBank subsample(const FeatureBank& bank, double fraction, std::uint64_t seed);

}  // namespace knnfuse

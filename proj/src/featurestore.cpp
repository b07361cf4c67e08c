#include "knnfuse/featurestore.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <tuple>

#include "knnfuse/error.hpp"
#include "knnfuse/rng.hpp"

namespace knnfuse {

namespace {

constexpr char kMagic[4] = {'F', 'B', 'N', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 4 + 4 + 8;

bool valid_id(const std::string& id) {
    return id.find_first_of(",\n\r") == std::string::npos;
}

// Little-endian encoding independent of host byte order.
template <typename T>
void put_le(std::string& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>(u & 0xff));
        u = static_cast<U>(u >> 8);
    }
}

class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get_le() {
        require(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            u |= static_cast<std::make_unsigned_t<T>>(
                static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }

    std::string_view take(std::size_t count) {
        require(count);
        std::string_view out(bytes_.data() + pos_, count);
        pos_ += count;
        return out;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void require(std::size_t count) const {
        if (count > remaining()) throw Error(ErrorCode::MalformedHeader, "truncated BIN file");
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.empty()) throw Error(ErrorCode::IoFailure, "empty output path");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

FeatureBank parse_bin(const std::string& bytes) {
    ByteReader in(bytes);
    if (in.remaining() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw Error(ErrorCode::MalformedHeader, "missing FBNK magic");
    }
    in.take(4);
    const auto version = in.get_le<std::uint32_t>();
    if (version != kVersion) {
        throw Error(ErrorCode::MalformedHeader, "unsupported version " + std::to_string(version));
    }
    const auto n = in.get_le<std::uint64_t>();
    const auto dim = in.get_le<std::uint32_t>();
    const auto classes = in.get_le<std::uint32_t>();
    const auto id_block_len = in.get_le<std::uint64_t>();
    if (n == 0 || dim == 0 || classes < 2) {
        throw Error(ErrorCode::MalformedHeader, "header requires n >= 1, D >= 1, C >= 2");
    }
    if (id_block_len > in.remaining()) throw Error(ErrorCode::MalformedHeader, "id block overruns file");

    std::vector<std::string> ids;
    ids.reserve(n);
    {
        std::string_view block = in.take(id_block_len);
        std::size_t start = 0;
        while (start < block.size()) {
            const auto nl = block.find('\n', start);
            if (nl == std::string_view::npos) {
                throw Error(ErrorCode::MalformedHeader, "id block not newline-terminated");
            }
            ids.emplace_back(block.substr(start, nl - start));
            start = nl + 1;
        }
        if (ids.size() != n) {
            throw Error(ErrorCode::MalformedHeader,
                        "id block has " + std::to_string(ids.size()) + " ids, expected " + std::to_string(n));
        }
    }

    if (in.remaining() < n * 4) throw Error(ErrorCode::MalformedHeader, "truncated label block");
    std::vector<std::uint32_t> labels(n);
    for (auto& l : labels) l = in.get_le<std::uint32_t>();

    if (in.remaining() != n * dim * 4) {
        throw Error(ErrorCode::DimensionMismatch,
                    "feature payload is " + std::to_string(in.remaining()) + " bytes, expected " +
                        std::to_string(n * dim * 4));
    }
    std::vector<float> features(n * dim);
    for (auto& f : features) f = std::bit_cast<float>(in.get_le<std::uint32_t>());

    return FeatureBank(std::move(features), dim, std::move(labels), classes, std::move(ids));
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

FeatureBank parse_csv(const std::string& text, std::optional<std::uint32_t> class_count) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::MalformedHeader, "empty CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = split_commas(line);
    if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
        throw Error(ErrorCode::MalformedHeader, "CSV header must be id,label,f0,...");
    }
    const std::size_t dim = header.size() - 2;
    for (std::size_t j = 0; j < dim; ++j) {
        if (header[j + 2] != "f" + std::to_string(j)) {
            throw Error(ErrorCode::MalformedHeader, "unexpected CSV column " + std::string(header[j + 2]));
        }
    }

    std::vector<float> features;
    std::vector<std::uint32_t> labels;
    std::vector<std::string> ids;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_commas(line);
        if (fields.size() != dim + 2) {
            throw Error(ErrorCode::DimensionMismatch,
                        "line " + std::to_string(line_no) + " has " + std::to_string(fields.size() - 2) +
                            " features, header declares " + std::to_string(dim));
        }
        ids.emplace_back(fields[0]);

        long long label = 0;
        auto [lp, lec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), label);
        if (lec != std::errc() || lp != fields[1].data() + fields[1].size()) {
            throw Error(ErrorCode::MalformedHeader, "bad label on line " + std::to_string(line_no));
        }
        if (label < 0 || label > static_cast<long long>(UINT32_MAX)) {
            throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label) + " on line " +
                                                        std::to_string(line_no));
        }
        labels.push_back(static_cast<std::uint32_t>(label));

        for (std::size_t j = 0; j < dim; ++j) {
            const auto f = fields[j + 2];
            double value = 0.0;
            auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
            if (ec == std::errc::result_out_of_range) {
                throw Error(ErrorCode::NonFiniteValue, "overflow on line " + std::to_string(line_no));
            }
            if (ec != std::errc() || p != f.data() + f.size()) {
                throw Error(ErrorCode::MalformedHeader, "bad number '" + std::string(f) + "' on line " +
                                                            std::to_string(line_no));
            }
            features.push_back(static_cast<float>(value));
        }
    }
    if (labels.empty()) throw Error(ErrorCode::InvalidArgument, "CSV has no samples");

    std::uint32_t classes = 2;
    if (class_count) {
        classes = *class_count;
    } else {
        classes = std::max<std::uint32_t>(2, *std::max_element(labels.begin(), labels.end()) + 1);
    }
    return FeatureBank(std::move(features), dim, std::move(labels), classes, std::move(ids));
}

}  // namespace

FeatureBank::FeatureBank(std::vector<float> features, std::size_t dim,
                         std::vector<std::uint32_t> labels, std::uint32_t class_count,
                         std::vector<std::string> ids)
    : features_(std::move(features)),
      dim_(dim),
      labels_(std::move(labels)),
      class_count_(class_count),
      ids_(std::move(ids)) {
    if (labels_.empty()) throw Error(ErrorCode::InvalidArgument, "bank must hold at least one sample");
    if (dim_ == 0) throw Error(ErrorCode::InvalidArgument, "feature dimension must be >= 1");
    if (class_count_ < 2) throw Error(ErrorCode::InvalidArgument, "class count must be >= 2");
    if (ids_.size() != labels_.size()) {
        throw Error(ErrorCode::LengthMismatch, "ids and labels differ in length");
    }
    if (features_.size() != labels_.size() * dim_) {
        throw Error(ErrorCode::DimensionMismatch, "feature buffer is not n x D");
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] >= class_count_) {
            throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(labels_[i]) + " at row " +
                                                        std::to_string(i) + " not below C=" +
                                                        std::to_string(class_count_));
        }
        if (!valid_id(ids_[i])) {
            throw Error(ErrorCode::InvalidArgument, "id at row " + std::to_string(i) +
                                                        " contains a comma or newline");
        }
    }
    for (std::size_t i = 0; i < features_.size(); ++i) {
        if (!std::isfinite(features_[i])) {
            throw Error(ErrorCode::NonFiniteValue, "row " + std::to_string(i / dim_) + ", column " +
                                                       std::to_string(i % dim_));
        }
    }
}

std::vector<std::size_t> FeatureBank::class_sizes() const {
    std::vector<std::size_t> sizes(class_count_, 0);
    for (auto l : labels_) ++sizes[l];
    return sizes;
}

FeatureBank FeatureBank::select(std::span<const std::size_t> indices) const {
    std::vector<float> features;
    features.reserve(indices.size() * dim_);
    std::vector<std::uint32_t> labels;
    labels.reserve(indices.size());
    std::vector<std::string> ids;
    ids.reserve(indices.size());
    for (auto i : indices) {
        if (i >= size()) throw Error(ErrorCode::InvalidArgument, "row index out of range");
        auto r = row(i);
        features.insert(features.end(), r.begin(), r.end());
        labels.push_back(labels_[i]);
        ids.push_back(ids_[i]);
    }
    return FeatureBank(std::move(features), dim_, std::move(labels), class_count_, std::move(ids));
}

FeatureBank FeatureBank::with_features(std::vector<float> features) const {
    return FeatureBank(std::move(features), dim_, labels_, class_count_, ids_);
}

BankFormat parse_bank_format(const std::string& name) {
    if (name == "bin" || name == "BIN" || name == "fbnk") return BankFormat::Bin;
    if (name == "csv" || name == "CSV") return BankFormat::Csv;
    throw Error(ErrorCode::InvalidArgument, "unknown bank format '" + name + "'");
}

FeatureBank load_bank(const std::filesystem::path& path, BankFormat format,
                      std::optional<std::uint32_t> csv_class_count) {
    const std::string bytes = read_file(path);
    return format == BankFormat::Bin ? parse_bin(bytes) : parse_csv(bytes, csv_class_count);
}

std::size_t bin_size(const FeatureBank& bank) {
    std::size_t id_block = 0;
    for (const auto& id : bank.ids()) id_block += id.size() + 1;
    return kHeaderBytes + id_block + bank.size() * 4 + bank.raw().size() * 4;
}

void write_bank(const FeatureBank& bank, const std::filesystem::path& path, BankFormat format) {
    std::string out;
    if (format == BankFormat::Bin) {
        out.reserve(bin_size(bank));
        out.append(kMagic, 4);
        put_le<std::uint32_t>(out, kVersion);
        put_le<std::uint64_t>(out, bank.size());
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bank.dim()));
        put_le<std::uint32_t>(out, bank.class_count());
        std::uint64_t id_block = 0;
        for (const auto& id : bank.ids()) id_block += id.size() + 1;
        put_le<std::uint64_t>(out, id_block);
        for (const auto& id : bank.ids()) {
            out += id;
            out.push_back('\n');
        }
        for (auto l : bank.labels()) put_le<std::uint32_t>(out, l);
        for (float f : bank.raw()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    } else {
        out = "id,label";
        for (std::size_t j = 0; j < bank.dim(); ++j) out += ",f" + std::to_string(j);
        out.push_back('\n');
        char buf[40];
        for (std::size_t i = 0; i < bank.size(); ++i) {
            out += bank.id(i);
            out += ',' + std::to_string(bank.label(i));
            for (float f : bank.row(i)) {
                std::snprintf(buf, sizeof buf, ",%.17g", static_cast<double>(f));
                out += buf;
            }
            out.push_back('\n');
        }
    }
    write_file(path, out);
}

// ---------------------------------------------------------------------------

Recipe parse_recipe(const std::string& name) {
    if (name == "l2center" || name == "l2-then-center") return Recipe::L2ThenCenter;
    if (name == "centerl2" || name == "center-then-l2") return Recipe::CenterThenL2;
    if (name == "none") return Recipe::None;
    throw Error(ErrorCode::InvalidArgument, "unknown recipe '" + name + "'");
}

std::string to_string(Recipe recipe) {
    switch (recipe) {
        case Recipe::L2ThenCenter: return "l2center";
        case Recipe::CenterThenL2: return "centerl2";
        case Recipe::None: return "none";
    }
    return "none";
}

namespace {

double norm2(std::span<const float> x) {
    double s = 0.0;
    for (float v : x) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

}  // namespace

PreprocessStats fit_preprocess(const FeatureBank& train, Recipe recipe) {
    PreprocessStats stats;
    stats.recipe = recipe;
    stats.mean.assign(train.dim(), 0.0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        auto x = train.row(i);
        double norm = 1.0;
        if (recipe == Recipe::L2ThenCenter) {
            norm = norm2(x);
            if (norm == 0.0) throw Error(ErrorCode::ZeroVector, "train row " + std::to_string(i));
        }
        // Same expression as apply_preprocess, so a row equal to the mean maps to exactly 0.
        for (std::size_t j = 0; j < x.size(); ++j) stats.mean[j] += static_cast<double>(x[j]) / norm;
    }
    for (auto& m : stats.mean) m /= static_cast<double>(train.size());
    return stats;
}

std::vector<double> apply_preprocess(std::span<const float> x, const PreprocessStats& stats) {
    if (x.size() != stats.mean.size()) {
        throw Error(ErrorCode::DimensionMismatch, "vector has dimension " + std::to_string(x.size()) +
                                                      ", stats expect " + std::to_string(stats.mean.size()));
    }
    std::vector<double> out(x.begin(), x.end());
    switch (stats.recipe) {
        case Recipe::L2ThenCenter: {
            const double norm = norm2(x);
            if (norm == 0.0) throw Error(ErrorCode::ZeroVector, "cannot L2-normalize a zero vector");
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = out[j] / norm - stats.mean[j];
            break;
        }
        case Recipe::CenterThenL2: {
            double s = 0.0;
            for (std::size_t j = 0; j < out.size(); ++j) {
                out[j] -= stats.mean[j];
                s += out[j] * out[j];
            }
            if (s == 0.0) throw Error(ErrorCode::ZeroVector, "centered vector is zero");
            const double norm = std::sqrt(s);
            for (auto& v : out) v /= norm;
            break;
        }
        case Recipe::None:
            break;
    }
    return out;
}

FeatureBank apply_preprocess(const FeatureBank& bank, const PreprocessStats& stats) {
    std::vector<float> features;
    features.reserve(bank.raw().size());
    for (std::size_t i = 0; i < bank.size(); ++i) {
        for (double v : apply_preprocess(bank.row(i), stats)) features.push_back(static_cast<float>(v));
    }
    return bank.with_features(std::move(features));
}

// ---------------------------------------------------------------------------

namespace {

void check_fraction(double f, const char* what) {
    if (!(f > 0.0 && f <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, std::string(what) + " must lie in (0, 1]");
    }
}

// Largest-remainder apportionment of `total` across groups with ideal shares
// `ideal[g]`, never exceeding `capacity[g]`. Ties go to the lower group index.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& ideal,
                                   const std::vector<std::size_t>& capacity) {
    std::vector<std::size_t> out(ideal.size());
    std::size_t assigned = 0;
    for (std::size_t g = 0; g < ideal.size(); ++g) {
        out[g] = std::min(capacity[g], static_cast<std::size_t>(std::floor(ideal[g] + 1e-9)));
        assigned += out[g];
    }
    std::vector<std::size_t> order(ideal.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ideal[a] - static_cast<double>(out[a]) > ideal[b] - static_cast<double>(out[b]);
    });
    while (assigned < total) {
        bool progressed = false;
        for (auto g : order) {
            if (assigned == total) break;
            if (out[g] < capacity[g]) {
                ++out[g];
                ++assigned;
                progressed = true;
            }
        }
        if (!progressed) break;
    }
    return out;
}

}  // namespace

SplitIndices split_indices(const FeatureBank& bank, const SplitSpec& spec) {
    check_fraction(spec.train_fraction, "train_fraction");
    check_fraction(spec.val_fraction, "val_fraction");
    if (spec.train_fraction + spec.val_fraction > 1.0 + 1e-12) {
        throw Error(ErrorCode::InvalidArgument, "split fractions sum above 1");
    }

    const std::size_t n = bank.size();
    std::vector<std::vector<std::size_t>> groups;
    if (spec.stratified) {
        groups.resize(bank.class_count());
        for (std::size_t i = 0; i < n; ++i) groups[bank.label(i)].push_back(i);
    } else {
        groups.emplace_back(n);
        std::iota(groups[0].begin(), groups[0].end(), 0);
    }

    const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
    const auto n_val = std::min(n - std::min(n, n_train),
                                static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(n))));
    if (n_train == 0) throw Error(ErrorCode::EmptySplit, "train split would be empty");
    if (n_val == 0) throw Error(ErrorCode::EmptySplit, "val split would be empty");

    std::vector<double> ideal_train, ideal_val;
    std::vector<std::size_t> sizes;
    for (const auto& g : groups) {
        sizes.push_back(g.size());
        ideal_train.push_back(spec.train_fraction * static_cast<double>(g.size()));
        ideal_val.push_back(spec.val_fraction * static_cast<double>(g.size()));
    }
    const auto train_counts = apportion(n_train, ideal_train, sizes);
    std::vector<std::size_t> left(sizes.size());
    for (std::size_t g = 0; g < sizes.size(); ++g) left[g] = sizes[g] - train_counts[g];
    const auto val_counts = apportion(n_val, ideal_val, left);

    Rng rng(spec.seed);
    SplitIndices out;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        auto members = groups[g];
        rng.shuffle(std::span<std::size_t>(members));
        const std::size_t a = train_counts[g];
        const std::size_t b = a + val_counts[g];
        out.train.insert(out.train.end(), members.begin(), members.begin() + a);
        out.val.insert(out.val.end(), members.begin() + a, members.begin() + b);
        out.test.insert(out.test.end(), members.begin() + b, members.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

SplitBanks split(const FeatureBank& bank, const SplitSpec& spec) {
    auto idx = split_indices(bank, spec);
    std::optional<FeatureBank> test;
    if (!idx.test.empty()) test = bank.select(idx.test);
    return SplitBanks{bank.select(idx.train), bank.select(idx.val), std::move(test)};
}

std::vector<std::size_t> subsample_indices(const FeatureBank& bank, double fraction,
                                           std::uint64_t seed) {
    check_fraction(fraction, "fraction");
    const std::size_t n = bank.size();
    const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
    if (keep == 0) throw Error(ErrorCode::EmptySplit, "subsample would be empty");

    // Every sample gets a rank key (position in a seeded per-class permutation,
    // spread evenly over [0,1)); taking a prefix of the key order is both
    // stratified and nested across fractions.
    std::vector<std::vector<std::size_t>> by_class(bank.class_count());
    for (std::size_t i = 0; i < n; ++i) by_class[bank.label(i)].push_back(i);
    Rng rng(seed);
    std::vector<std::tuple<double, std::uint32_t, std::size_t>> keyed;
    keyed.reserve(n);
    for (std::uint32_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        rng.shuffle(std::span<std::size_t>(members));
        const double s = static_cast<double>(members.size());
        for (std::size_t j = 0; j < members.size(); ++j) {
            keyed.emplace_back((static_cast<double>(j) + 0.5) / s, c, members[j]);
        }
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::size_t> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) out.push_back(std::get<2>(keyed[i]));
    std::sort(out.begin(), out.end());
    return out;
}

FeatureBank subsample(const FeatureBank& bank, double fraction, std::uint64_t seed) {
    const auto idx = subsample_indices(bank, fraction, seed);
    return bank.select(idx);
}

}  // namespace knnfuse

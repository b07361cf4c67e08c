#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "knnfuse/featurestore.hpp"
#include "knnfuse/parametric.hpp"

namespace knnfuse {

/// Model checkpoint file:
///
///   magic "KNFC" (4 B) | version u32 = 1 | header_len u64 |
///   header (header_len bytes of UTF-8 JSON) |
///   parameters (f32 little-endian; per layer: weights row-major, then bias)
///
/// The JSON header records dims {input, classes, hidden}, the training config,
/// the seed, the preprocessing stats fitted on the training bank, and the
/// parameter count. Parameters are stored as f32, so a reloaded model equals
/// the in-memory one rounded to single precision.
struct Checkpoint {
    Model model;
    PreprocessStats preprocess;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace knnfuse

#pragma once

#include <filesystem>
#include <string>

#include "knnfuse/rng.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        const auto salt = knnfuse::derive_seed(reinterpret_cast<std::uintptr_t>(this) ^ ++counter, tag);
        path_ = std::filesystem::temp_directory_path() / ("knnfuse-" + tag + "-" + std::to_string(salt));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil

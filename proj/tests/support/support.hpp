#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::filesystem::path fixture(const std::string& name);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// Space-separated tokens drawn from a vocabulary of `vocab` words.
std::string random_words(std::mt19937_64& rng, std::size_t count, std::size_t vocab = 5000);

/// Copy of `tokens` with a fraction of positions replaced by fresh words.
std::vector<std::string> perturb(std::mt19937_64& rng, std::vector<std::string> tokens,
                                 double replace_fraction);

std::string join(const std::vector<std::string>& tokens);

}  // namespace testing

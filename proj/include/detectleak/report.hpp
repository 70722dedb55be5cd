#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detectleak/annotation.hpp"

namespace detectleak {

struct LeakageMetrics {
    std::size_t count = 0;
    std::size_t n_total = 0;
    double ratio = 0.0;
    std::string percent;
};

/// Leakage percentage rounded half-up to one decimal ("55.7%"), or "0%" when
/// nothing leaked. Rounding uses exact integer arithmetic.
std::string format_percent(std::size_t count, std::size_t n_total);

/// Throws DataError when n_total is 0 or count exceeds it.
LeakageMetrics leakage_metrics(std::size_t n_total, std::size_t leaked_count);
LeakageMetrics leakage_metrics(std::size_t n_total, const std::set<std::string>& leaked);

struct RepoCount {
    std::string repo;
    std::size_t count = 0;

    friend bool operator==(const RepoCount&, const RepoCount&) = default;
};

inline constexpr const char* kUnknownRepo = "unknown";

/// Tallies duplicate pairs by the corpus document's repository (missing
/// repositories fall into "unknown"), sorted by count descending then name.
std::vector<RepoCount> repo_aggregation(std::span<const std::optional<std::string>> pair_repos);

struct KeywordMatches {
    std::string keyword;
    std::vector<std::string> repos;

    std::size_t count() const noexcept { return repos.size(); }
};

/// Case-insensitive substring scan of repository names. Repos are reported in
/// input order. Throws UsageError when `keywords` is empty.
std::vector<KeywordMatches> keyword_scan(std::span<const std::string> repo_paths,
                                         std::span<const std::string> keywords);

struct RemovedSample {
    std::string doc_id;
    std::vector<std::string> pair_ids;
};

struct CleanResult {
    std::size_t input_records = 0;
    std::size_t kept = 0;
    std::vector<RemovedSample> removed;  // input order
};

/// Copies the raw benchmark file line by line, dropping records whose id is
/// leaked. Kept lines are written byte-for-byte. Writes the removal manifest
/// to `manifest_path` when given. Throws DataError if a leaked id does not
/// occur in the input.
CleanResult emit_clean(const std::filesystem::path& input,
                       const std::map<std::string, std::vector<std::string>>& leaked,
                       const std::filesystem::path& output,
                       const std::optional<std::filesystem::path>& manifest_path = std::nullopt,
                       const nlohmann::json& config = {});

struct LabeledSample {
    std::string dataset;
    std::string doc_id;
    std::string text;
    bool leaked = false;

    friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct AutodetectSet {
    std::vector<LabeledSample> samples;
    std::size_t input_samples = 0;
    std::size_t duplicates_removed = 0;
    std::size_t leaked_available = 0;
    std::size_t non_leaked_available = 0;
    std::size_t per_class = 0;
};

/// Deduplicates by text (a text seen with any leaked copy stays leaked),
/// under-samples the majority class to the minority size and shuffles, all
/// driven by `seed`. Throws DataError when either class is empty.
AutodetectSet build_autodetect(std::vector<LabeledSample> samples, std::uint64_t seed);

/// Every benchmark document that appears in a finally-labeled pair, marked
/// leaked iff any of its pairs is a duplicate.
std::vector<LabeledSample> labeled_samples(const AnnotationStore& store);

struct BenchmarkRow {
    std::string dataset;
    std::size_t n_total = 0;
    std::size_t n_auto = 0;
    std::size_t n_manual = 0;
    LeakageMetrics leakage;
    std::optional<std::string> published_ratio;
};

struct LeakageReport {
    std::vector<BenchmarkRow> benchmarks;
    std::vector<RepoCount> repos;
    std::vector<KeywordMatches> keywords;
    std::vector<std::string> warnings;
    nlohmann::json metadata;
};

inline const std::vector<std::string> kDefaultKeywords = {"leetcode", "programming",
                                                          "data-structures"};

/// Builds the report from a store's metadata and final labels. Pairs still
/// awaiting labels or adjudication do not contribute to n_manual.
LeakageReport build_report(const AnnotationStore& store,
                           std::span<const std::string> keywords = kDefaultKeywords);

nlohmann::json to_json(const LeakageReport& report);
/// Markdown table with columns #Auto, #Manual, Leaked Count, Leaked Ratio.
std::string to_markdown(const LeakageReport& report);

}  // namespace detectleak

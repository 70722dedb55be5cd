#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace detectleak {

enum class Gold { leaked, non_leaked };

struct PerplexityRecord {
    std::string sample_id;
    Gold gold = Gold::non_leaked;
    double perplexity = 1.0;

    friend bool operator==(const PerplexityRecord&, const PerplexityRecord&) = default;
};

struct ScoreLoadStats {
    std::size_t accepted = 0;
    std::size_t rejected_nonfinite = 0;
    std::size_t rejected_malformed = 0;
};

/// Reads `{"id", "gold", "ppl"}` lines. Records with non-finite or
/// non-positive perplexity are rejected and counted; a repeated id is a
/// DataError.
std::vector<PerplexityRecord> load_scores(const std::filesystem::path& path,
                                          ScoreLoadStats* stats = nullptr);

/// Ascending perplexity, ties by sample_id.
std::vector<PerplexityRecord> rank_ascending(std::vector<PerplexityRecord> records);

/// Share of gold-leaked records among the k lowest-perplexity ones.
/// Throws UsageError unless 1 <= k <= records.size().
double topk_accuracy(std::span<const PerplexityRecord> records, std::size_t k);

/// 100, 200, ..., 1000 clipped to the record count.
std::vector<std::size_t> default_ks(std::size_t record_count);

/// Parses "start:stop:step" (inclusive stop) or a comma list.
std::vector<std::size_t> parse_ks(const std::string& spec);

std::vector<std::pair<std::size_t, double>> accuracy_curve(
    std::span<const PerplexityRecord> records, std::span<const std::size_t> ks);

/// Drops the ceil(top_pct * n_class) highest-perplexity records of each class;
/// survivors keep their input order.
/// Throws UsageError unless 0 <= top_pct < 1.
std::vector<PerplexityRecord> trim_outliers(std::span<const PerplexityRecord> records,
                                            double top_pct = 0.02);

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t bins = 0;
    std::vector<std::size_t> leaked;
    std::vector<std::size_t> non_leaked;

    double bin_width() const noexcept { return bins ? (hi - lo) / static_cast<double>(bins) : 0.0; }
};

/// Equal-width bins over [min, max] of the given records; the maximum lands
/// in the last bin. A zero-width range puts everything in bin 0.
Histogram distribution_export(std::span<const PerplexityRecord> records, std::size_t bins);

nlohmann::json to_json(const Histogram& histogram);

}  // namespace detectleak

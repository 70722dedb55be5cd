#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace detectleak {

enum class Origin { corpus, benchmark };

std::string_view to_string(Origin origin);
Origin parse_origin(std::string_view text);

/// One corpus file or benchmark sample. Immutable once ingested.
struct Document {
    std::string doc_id;
    Origin origin = Origin::corpus;
    std::string dataset;
    std::optional<std::string> repo_path;
    std::string text;  // normalized

    std::size_t byte_len() const noexcept { return text.size(); }
};

/// Identity of a document across datasets: doc ids are unique only within one.
struct DocRef {
    std::string dataset;
    std::string doc_id;

    friend auto operator<=>(const DocRef&, const DocRef&) = default;
};

/// Flat string form "dataset<US>doc_id" (US = 0x1f) used as an index key.
std::string doc_key(const DocRef& ref);
DocRef parse_doc_key(std::string_view key);

struct NormalizationPolicy {
    bool lowercase = false;
    bool collapse_whitespace = true;
    bool strip_line_comments = false;
    bool strip_block_comments = false;

    friend bool operator==(const NormalizationPolicy&, const NormalizationPolicy&) = default;
};

nlohmann::json to_json(const NormalizationPolicy& policy);
NormalizationPolicy policy_from_json(const nlohmann::json& j);

/// Applies `policy` to `text`. Total and idempotent for every flag combination.
///
/// Comment stripping runs as a single left-to-right scan: `/*...*/` spans
/// (unterminated ones run to the end) become one space, `//...` and `#...`
/// are removed up to but not including the next newline. Lowercasing and
/// whitespace handling are ASCII-only so multi-byte UTF-8 sequences pass
/// through untouched; collapsing also trims leading and trailing whitespace.
std::string normalize(std::string_view text, const NormalizationPolicy& policy);

struct IngestStats {
    std::size_t accepted = 0;
    std::size_t rejected_empty = 0;
    std::size_t rejected_malformed = 0;

    std::size_t lines() const noexcept { return accepted + rejected_empty + rejected_malformed; }
    /// Benchmark denominator: empty-after-normalization samples still count.
    std::size_t n_total() const noexcept { return accepted + rejected_empty; }

    friend bool operator==(const IngestStats&, const IngestStats&) = default;
};

nlohmann::json to_json(const IngestStats& stats);
IngestStats stats_from_json(const nlohmann::json& j);

/// Called once per rejected-malformed line with its 1-based number and reason.
using MalformedLineSink = std::function<void(std::size_t line_no, const std::string& reason)>;

struct IngestOptions {
    Origin origin = Origin::corpus;
    std::string dataset;
    std::string text_field = "text";
    NormalizationPolicy policy;
    MalformedLineSink on_malformed;
};

/// Streams `path` (one JSON record per line) and calls `on_document` for each
/// accepted record in file order.
///
/// Throws DataError when the file cannot be read or a doc id repeats.
IngestStats ingest(const std::filesystem::path& path, const IngestOptions& options,
                   const std::function<void(Document&&)>& on_document);

/// Convenience wrapper collecting every accepted document.
std::vector<Document> ingest_all(const std::filesystem::path& path, const IngestOptions& options,
                                 IngestStats* stats = nullptr);

/// Serialized form used by the normalized document store:
/// `{"id", "text", "repo"}`.
nlohmann::json to_json(const Document& doc);
Document document_from_json(const nlohmann::json& j, Origin origin, const std::string& dataset);

struct DatasetEntry {
    std::string dataset;
    Origin origin = Origin::corpus;
    std::filesystem::path path;
    std::string text_field = "text";
    /// Externally reported leakage percentage, checked against our own ratio.
    std::optional<std::string> published_ratio;
};

/// Loads a dataset manifest: either a JSON array of entries or one entry per
/// line. Relative paths resolve against the manifest's directory.
std::vector<DatasetEntry> load_manifest(const std::filesystem::path& path);
nlohmann::json to_json(const DatasetEntry& entry);
DatasetEntry dataset_entry_from_json(const nlohmann::json& j,
                                     const std::filesystem::path& base_dir = {});

/// Dataset names double as file names inside the run directory.
bool is_valid_dataset_name(std::string_view name);

}  // namespace detectleak

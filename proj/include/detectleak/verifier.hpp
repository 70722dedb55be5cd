#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "detectleak/corpus.hpp"
#include "detectleak/lsh.hpp"
#include "detectleak/sketch.hpp"

namespace detectleak {

enum class PairStatus { candidate, flagged, labeled, adjudicated };
enum class Suggestion { none, exact_copy_hint };

std::string_view to_string(PairStatus status);
std::string_view to_string(Suggestion suggestion);
Suggestion parse_suggestion(std::string_view text);

/// A (benchmark doc, corpus doc) pair surfaced by the index.
struct CandidatePair {
    std::string pair_id;
    DocRef bench;
    DocRef corpus;
    double est_jaccard = 0.0;
    double exact_jaccard = 0.0;
    PairStatus status = PairStatus::candidate;
    Suggestion suggested = Suggestion::none;
};

/// Stable 16-hex-digit id derived from both document identities.
std::string make_pair_id(const DocRef& bench, const DocRef& corpus);

CandidatePair make_candidate(const DocRef& bench, const DocRef& corpus);

/// Everything verification needs about one document.
struct DocFeatures {
    ShingleSet shingles;
    MinHashSignature signature;
    std::string text;
};

/// Returns nullptr when the document's features are unavailable.
using FeatureLookup = std::function<const DocFeatures*(Origin, const DocRef&)>;

struct QuarantinedCandidate {
    CandidatePair pair;
    std::string reason;
};

struct VerifyStats {
    std::size_t checked = 0;
    std::size_t flagged = 0;
    std::size_t dropped = 0;
    std::size_t quarantined = 0;
};

struct VerifyResult {
    std::vector<CandidatePair> flagged;  // sorted by pair_id
    std::vector<QuarantinedCandidate> quarantined;
    VerifyStats stats;
};

/// Computes exact Jaccard for each candidate and keeps those at or above
/// `threshold` as flagged. Candidates whose features are missing are
/// quarantined rather than failing the batch.
VerifyResult verify(std::span<const CandidatePair> candidates, const FeatureLookup& features,
                    double threshold);

struct ScanStats {
    std::string benchmark;
    std::size_t benchmark_docs = 0;
    std::size_t corpus_docs = 0;
    std::uint64_t exhaustive_pairs = 0;
    std::uint64_t candidates = 0;
    std::uint64_t comparisons_avoided = 0;
    std::size_t flagged = 0;
    std::size_t dropped = 0;
    std::size_t quarantined = 0;
    std::size_t flagged_benchmark_docs = 0;
};

nlohmann::json to_json(const ScanStats& stats);

struct ScanResult {
    std::vector<CandidatePair> flagged;  // sorted by pair_id
    std::vector<QuarantinedCandidate> quarantined;
    ScanStats stats;
};

/// Candidate corpus ordinals per benchmark document, sorted and unique.
using CandidateLists = std::vector<std::vector<std::uint32_t>>;

/// Queries every benchmark signature against the bands loaded in `index` and
/// merges the collisions into `lists` (resized to bench.size() if empty).
void collect_candidates(std::span<const SignedDocument> bench, const LshIndex& index,
                        CandidateLists& lists, std::size_t jobs = 1);

/// Verifies collected candidates. Benchmark documents are identified by
/// (benchmark, bench[i].doc_id); corpus ordinals resolve through `corpus_keys`.
ScanResult verify_candidates(std::string_view benchmark, std::span<const SignedDocument> bench,
                             const CandidateLists& lists, std::span<const std::string> corpus_keys,
                             const FeatureLookup& features, double threshold,
                             std::size_t jobs = 1);

/// collect_candidates + verify_candidates against a fully loaded index.
ScanResult scan(std::string_view benchmark, std::span<const SignedDocument> bench,
                const LshIndex& index, const FeatureLookup& features, double threshold,
                std::size_t jobs = 1);

// Flagged-pairs file: header line then one record per pair,
// {"pair_id", "bench_id", "corpus_id", "est_j", "exact_j", "suggested",
//  "bench_dataset", "corpus_dataset"}, sorted by pair_id.
inline constexpr const char* kFlaggedFormat = "detectleak.flagged_pairs";
inline constexpr int kFlaggedVersion = 1;

nlohmann::json to_json(const CandidatePair& pair);
CandidatePair candidate_from_json(const nlohmann::json& j);

void write_flagged(const std::filesystem::path& path, std::span<const CandidatePair> pairs,
                   const nlohmann::json& config, const nlohmann::json& extra = {});
std::vector<CandidatePair> read_flagged(const std::filesystem::path& path,
                                        nlohmann::json* header = nullptr);
void write_quarantine(const std::filesystem::path& path,
                      std::span<const QuarantinedCandidate> quarantined,
                      const nlohmann::json& config);

}  // namespace detectleak

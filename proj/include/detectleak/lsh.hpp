#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "detectleak/sketch.hpp"

namespace detectleak {

struct LshParams {
    std::size_t num_perm = kDefaultPermutations;
    std::size_t bands = 1;
    std::size_t rows = 1;
    double threshold = 0.7;

    friend bool operator==(const LshParams&, const LshParams&) = default;
};

/// Throws UsageError unless b*r <= num_perm, b, r >= 1 and 0 < t < 1.
void validate(const LshParams& params);

nlohmann::json to_json(const LshParams& params);
LshParams lsh_params_from_json(const nlohmann::json& j);

/// Weights applied to the two error areas of the S-curve when planning bands.
/// Missed leaks cost more than extra candidates, so false negatives dominate.
struct BandWeights {
    double false_positive = 0.3;
    double false_negative = 0.7;
};

/// P(candidate | Jaccard j) = 1 - (1 - j^r)^b.
double collision_probability(double j, std::size_t bands, std::size_t rows);

/// Jaccard value where the S-curve is steepest, (1/b)^(1/r).
double s_curve_midpoint(std::size_t bands, std::size_t rows);

/// fp * ∫_0^t P(s) ds + fn * ∫_t^1 (1 - P(s)) ds, by composite Simpson's rule.
double banding_error(std::size_t bands, std::size_t rows, double threshold,
                     const BandWeights& weights = {});

/// Picks the (b, r) with b*r <= num_perm minimizing banding_error. Ties go to
/// the smaller b, then the smaller r.
LshParams plan_bands(std::size_t num_perm, double threshold, const BandWeights& weights = {});

/// Feeds every (key, signature) pair to the callback. Invoked once per shard.
using SignatureSource =
    std::function<void(const std::function<void(const std::string&, const MinHashSignature&)>&)>;

/// Banded MinHash index over corpus signatures.
///
/// Documents are identified by an opaque key and stored as dense ordinals in
/// insertion order. Buckets only grow while building; after finalize() the
/// index is read-only and safe for concurrent queries. An index may hold a
/// contiguous sub-range of bands (see load()), in which case queries only
/// consult those bands.
class LshIndex {
public:
    LshIndex(LshParams params, std::uint64_t seed);
    /// Index that only materializes bands [band_begin, band_end).
    LshIndex(LshParams params, std::uint64_t seed, std::size_t band_begin, std::size_t band_end);

    /// Throws DataError if the signature has the wrong length or seed.
    std::uint32_t add(std::string key, const MinHashSignature& sig);
    void finalize() { finalized_ = true; }
    bool finalized() const noexcept { return finalized_; }

    /// Sorted ordinals of every document sharing at least one band key with `sig`.
    std::vector<std::uint32_t> query_ordinals(const MinHashSignature& sig) const;

    /// Keys colliding with `sig`, sorted, with `exclude_key` removed.
    std::vector<std::string> query(const MinHashSignature& sig,
                                   std::string_view exclude_key = {}) const;

    const LshParams& params() const noexcept { return params_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::size_t doc_count() const noexcept { return keys_.size(); }
    const std::string& key(std::uint32_t ordinal) const { return keys_.at(ordinal); }
    const std::vector<std::string>& keys() const noexcept { return keys_; }

    std::size_t band_begin() const noexcept { return band_begin_; }
    std::size_t band_end() const noexcept { return band_begin_ + buckets_.size(); }
    std::size_t bucket_count(std::size_t band) const;
    /// Sum of bucket sizes across the loaded bands.
    std::size_t total_membership() const;
    /// Ordinals stored under `band_key` in `band` (empty if none).
    std::span<const std::uint32_t> bucket(std::size_t band, std::uint64_t band_key) const;

    /// Salted hash of the `band`-th r-row slice of `sig`.
    std::uint64_t band_key(std::size_t band, const MinHashSignature& sig) const;

    /// Writes header.json, doc_keys.jsonl and one band_NNNN.bin per band.
    void save(const std::filesystem::path& dir, const nlohmann::json& config = {}) const;

    /// Loads bands [band_begin, band_end) of a persisted index (all bands by default).
    static LshIndex load(const std::filesystem::path& dir, std::size_t band_begin = 0,
                         std::optional<std::size_t> band_end = std::nullopt);

private:
    friend void build_index_sharded(const std::filesystem::path&, const LshParams&, std::uint64_t,
                                    std::size_t, const SignatureSource&, const nlohmann::json&);

    using BandTable = std::unordered_map<std::uint64_t, std::vector<std::uint32_t>>;

    void check_signature(const MinHashSignature& sig) const;

    LshParams params_;
    std::uint64_t seed_;
    std::size_t band_begin_ = 0;
    std::vector<std::string> keys_;
    std::vector<BandTable> buckets_;
    bool finalized_ = false;
};

/// Builds and finalizes an in-memory index.
LshIndex build_index(std::span<const SignedDocument> signatures, const LshParams& params,
                     std::uint64_t seed);

/// Builds a persisted index holding at most ceil(bands / shards) bands in
/// memory at a time. Re-reads `source` once per shard.
void build_index_sharded(const std::filesystem::path& dir, const LshParams& params,
                         std::uint64_t seed, std::size_t shards, const SignatureSource& source,
                         const nlohmann::json& config = {});

inline constexpr const char* kIndexFormat = "detectleak.lsh_index";
inline constexpr int kIndexVersion = 1;

/// Reads header.json of a persisted index.
nlohmann::json read_index_header(const std::filesystem::path& dir);

}  // namespace detectleak

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "detectleak/jsonl.hpp"

namespace detectleak {

enum class ShingleMode { word, character };

/// Sorted, unique 64-bit fingerprints of a document's n-gram windows.
struct ShingleSet {
    std::size_t n = 2;
    ShingleMode mode = ShingleMode::word;
    std::vector<std::uint64_t> hashes;
    std::size_t token_count = 0;

    bool empty() const noexcept { return hashes.empty(); }
    std::size_t size() const noexcept { return hashes.size(); }
};

/// Splits `text` into maximal runs of word characters. ASCII letters, digits
/// and '_' are word characters, as is every non-ASCII code point.
std::vector<std::string_view> tokenize(std::string_view text);

/// Word mode fingerprints every window of `n` consecutive tokens; character
/// mode every window of `n` consecutive code points. Inputs shorter than `n`
/// (but non-empty) produce one shingle over the whole sequence.
ShingleSet shingle(std::string_view text, std::size_t n, ShingleMode mode = ShingleMode::word);

/// |a ∩ b| / |a ∪ b|. Two empty sets compare as 1.0, one empty set as 0.0.
/// Throws UsageError when the sets were built with different n or mode.
double exact_jaccard(const ShingleSet& a, const ShingleSet& b);

inline constexpr std::size_t kMinPermutations = 16;
inline constexpr std::size_t kDefaultPermutations = 256;

/// Marker stored in every slot of the signature of an empty shingle set. Real
/// minima live below the Mersenne prime 2^61 - 1, so it never occurs otherwise.
inline constexpr std::uint64_t kEmptySlot = ~std::uint64_t{0};

struct MinHashSignature {
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> mins;

    std::size_t num_perm() const noexcept { return mins.size(); }
    bool is_empty_sentinel() const noexcept;

    friend bool operator==(const MinHashSignature&, const MinHashSignature&) = default;
};

/// A family of `num_perm` universal hash functions h(x) = (a*x + b) mod (2^61 - 1)
/// whose coefficients are drawn from a mt19937_64 seeded with `seed`.
class MinHasher {
public:
    /// Throws UsageError when num_perm < kMinPermutations.
    MinHasher(std::size_t num_perm, std::uint64_t seed);

    MinHashSignature sign(const ShingleSet& shingles) const;

    std::size_t num_perm() const noexcept { return a_.size(); }
    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::uint64_t seed_;
    std::vector<std::uint64_t> a_;
    std::vector<std::uint64_t> b_;
};

/// One-shot form of MinHasher{num_perm, seed}.sign(s).
MinHashSignature minhash(const ShingleSet& s, std::size_t num_perm, std::uint64_t seed);

/// Fraction of slots where the two signatures agree.
/// Throws UsageError on mismatched num_perm or seed.
double estimate_jaccard(const MinHashSignature& a, const MinHashSignature& b);

// Signature dump: a header line followed by one
// `{"id": str, "mins": [hex...]}` record per document. num_perm and seed are
// stored once in the header and apply to every record.
inline constexpr const char* kSignatureFormat = "detectleak.signatures";
inline constexpr int kSignatureVersion = 1;

struct SignedDocument {
    std::string doc_id;
    MinHashSignature signature;
};

class SignatureWriter {
public:
    SignatureWriter(const std::filesystem::path& path, std::size_t num_perm, std::uint64_t seed,
                    const nlohmann::json& config);

    void write(const std::string& doc_id, const MinHashSignature& sig);
    void close() { out_.close(); }

private:
    JsonlWriter out_;
    std::size_t num_perm_;
    std::uint64_t seed_;
};

/// Streams a signature dump. Returns the header payload.
nlohmann::json read_signatures(const std::filesystem::path& path,
                               const std::function<void(SignedDocument&&)>& on_signature);

}  // namespace detectleak

#include "detectleak/sketch.hpp"

#include <algorithm>
#include <random>
#include <span>

#include "detectleak/error.hpp"
#include "detectleak/hash.hpp"

namespace detectleak {

namespace {

constexpr std::uint64_t kMersenne61 = (std::uint64_t{1} << 61) - 1;

constexpr std::uint64_t reduce61(std::uint64_t x) noexcept {
    x = (x & kMersenne61) + (x >> 61);
    return x >= kMersenne61 ? x - kMersenne61 : x;
}

inline std::uint64_t mulmod61(std::uint64_t a, std::uint64_t b) noexcept {
    const unsigned __int128 prod = static_cast<unsigned __int128>(a) * b;
    const std::uint64_t lo = static_cast<std::uint64_t>(prod) & kMersenne61;
    const std::uint64_t hi = static_cast<std::uint64_t>(prod >> 61);
    return reduce61(lo + hi);
}

bool is_word_byte(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
           c >= 0x80;
}

std::vector<std::string_view> code_points(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto lead = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (lead >= 0xf0) len = 4;
        else if (lead >= 0xe0) len = 3;
        else if (lead >= 0xc0) len = 2;
        len = std::min(len, text.size() - i);
        // Stray continuation bytes inside the claimed length end the sequence early.
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(text[i + k]) & 0xc0) != 0x80) {
                len = k;
                break;
            }
        }
        out.push_back(text.substr(i, len));
        i += len;
    }
    return out;
}

std::uint64_t window_fingerprint(std::span<const std::string_view> window) {
    std::uint64_t h = kFnvOffset;
    for (auto piece : window) {
        h = fnv1a_update(h, piece);
        h = fnv1a_update(h, std::uint8_t{0x1f});
    }
    return mix64(h);
}

}  // namespace

std::vector<std::string_view> tokenize(std::string_view text) {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && !is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
        const std::size_t start = i;
        while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) tokens.push_back(text.substr(start, i - start));
    }
    return tokens;
}

ShingleSet shingle(std::string_view text, std::size_t n, ShingleMode mode) {
    if (n == 0) throw UsageError("shingle size must be >= 1");
    const std::vector<std::string_view> units =
        mode == ShingleMode::word ? tokenize(text) : code_points(text);
    ShingleSet set;
    set.n = n;
    set.mode = mode;
    set.token_count = units.size();
    if (units.empty()) return set;
    const std::span<const std::string_view> all(units);
    if (units.size() < n) {
        set.hashes.push_back(window_fingerprint(all));
        return set;
    }
    set.hashes.reserve(units.size() - n + 1);
    for (std::size_t i = 0; i + n <= units.size(); ++i) {
        set.hashes.push_back(window_fingerprint(all.subspan(i, n)));
    }
    std::sort(set.hashes.begin(), set.hashes.end());
    set.hashes.erase(std::unique(set.hashes.begin(), set.hashes.end()), set.hashes.end());
    return set;
}

double exact_jaccard(const ShingleSet& a, const ShingleSet& b) {
    if (a.n != b.n || a.mode != b.mode) {
        throw UsageError("exact_jaccard: shingle sets built with different n or mode");
    }
    if (a.empty() && b.empty()) return 1.0;
    if (a.empty() || b.empty()) return 0.0;
    std::size_t inter = 0;
    auto ia = a.hashes.begin();
    auto ib = b.hashes.begin();
    while (ia != a.hashes.end() && ib != b.hashes.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++inter;
            ++ia;
            ++ib;
        }
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

bool MinHashSignature::is_empty_sentinel() const noexcept {
    return !mins.empty() &&
           std::all_of(mins.begin(), mins.end(), [](std::uint64_t v) { return v == kEmptySlot; });
}

MinHasher::MinHasher(std::size_t num_perm, std::uint64_t seed) : seed_(seed) {
    if (num_perm < kMinPermutations) {
        throw UsageError("num_perm must be >= " + std::to_string(kMinPermutations) + " (got " +
                         std::to_string(num_perm) + ")");
    }
    std::mt19937_64 rng(seed);
    a_.resize(num_perm);
    b_.resize(num_perm);
    for (std::size_t i = 0; i < num_perm; ++i) {
        a_[i] = 1 + rng() % (kMersenne61 - 1);
        b_[i] = rng() % kMersenne61;
    }
}

MinHashSignature MinHasher::sign(const ShingleSet& shingles) const {
    MinHashSignature sig;
    sig.seed = seed_;
    sig.mins.assign(a_.size(), kEmptySlot);
    if (shingles.empty()) return sig;
    std::fill(sig.mins.begin(), sig.mins.end(), kMersenne61);
    const std::size_t k = a_.size();
    std::uint64_t* mins = sig.mins.data();
    for (std::uint64_t h : shingles.hashes) {
        const std::uint64_t x = reduce61(h);
        for (std::size_t i = 0; i < k; ++i) {
            const std::uint64_t v = reduce61(mulmod61(a_[i], x) + b_[i]);
            if (v < mins[i]) mins[i] = v;
        }
    }
    return sig;
}

MinHashSignature minhash(const ShingleSet& s, std::size_t num_perm, std::uint64_t seed) {
    return MinHasher(num_perm, seed).sign(s);
}

double estimate_jaccard(const MinHashSignature& a, const MinHashSignature& b) {
    if (a.num_perm() != b.num_perm() || a.seed != b.seed) {
        throw UsageError("estimate_jaccard: signatures differ in num_perm or seed");
    }
    if (a.mins.empty()) throw UsageError("estimate_jaccard: empty signature");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.mins.size(); ++i) agree += a.mins[i] == b.mins[i];
    return static_cast<double>(agree) / static_cast<double>(a.mins.size());
}

// ---- signature dump ----------------------------------------------------------

SignatureWriter::SignatureWriter(const std::filesystem::path& path, std::size_t num_perm,
                                 std::uint64_t seed, const nlohmann::json& config)
    : out_(path), num_perm_(num_perm), seed_(seed) {
    out_.write(make_header(kSignatureFormat, kSignatureVersion, config,
                           {{"num_perm", num_perm}, {"seed", seed}}));
}

void SignatureWriter::write(const std::string& doc_id, const MinHashSignature& sig) {
    if (sig.num_perm() != num_perm_ || sig.seed != seed_) {
        throw UsageError("signature for '" + doc_id + "' does not match the dump's num_perm/seed");
    }
    std::string mins;
    mins.reserve(sig.mins.size() * 16);
    for (std::uint64_t v : sig.mins) mins += to_hex(v);
    out_.write({{"id", doc_id}, {"num_perm", num_perm_}, {"seed", seed_}, {"mins", mins}});
}

namespace {

std::uint64_t parse_hex16(std::string_view s) {
    std::uint64_t v = 0;
    for (char c : s) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
        else throw DataError("bad hex digit in signature dump");
    }
    return v;
}

}  // namespace

nlohmann::json read_signatures(const std::filesystem::path& path,
                               const std::function<void(SignedDocument&&)>& on_signature) {
    const auto first = read_artifact_header(path);
    const auto num_perm = first.at("num_perm").get<std::size_t>();
    const auto seed = first.at("seed").get<std::uint64_t>();
    return read_artifact(path, kSignatureFormat, [&](const nlohmann::json& record) {
        const std::string& mins = record.at("mins").get_ref<const std::string&>();
        if (mins.size() != num_perm * 16) {
            throw DataError(path.string() + ": signature length mismatch for '" +
                            record.at("id").get<std::string>() + "'");
        }
        SignedDocument doc;
        doc.doc_id = record.at("id").get<std::string>();
        doc.signature.seed = seed;
        doc.signature.mins.resize(num_perm);
        for (std::size_t i = 0; i < num_perm; ++i) {
            doc.signature.mins[i] = parse_hex16(std::string_view(mins).substr(i * 16, 16));
        }
        on_signature(std::move(doc));
    });
}

}  // namespace detectleak

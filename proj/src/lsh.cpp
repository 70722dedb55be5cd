#include "detectleak/lsh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <tuple>

#include "detectleak/error.hpp"
#include "detectleak/hash.hpp"
#include "detectleak/jsonl.hpp"

namespace detectleak {

static_assert(std::endian::native == std::endian::little,
              "band files are written in host byte order and documented as little-endian");

void validate(const LshParams& p) {
    if (p.bands < 1 || p.rows < 1) throw UsageError("LSH bands and rows must be >= 1");
    if (p.bands * p.rows > p.num_perm) {
        throw UsageError("LSH bands*rows (" + std::to_string(p.bands * p.rows) +
                         ") exceeds num_perm (" + std::to_string(p.num_perm) + ")");
    }
    if (!(p.threshold > 0.0 && p.threshold < 1.0)) {
        throw UsageError("LSH threshold must lie in (0, 1)");
    }
}

nlohmann::json to_json(const LshParams& p) {
    return {{"num_perm", p.num_perm}, {"bands", p.bands}, {"rows", p.rows}, {"threshold", p.threshold}};
}

LshParams lsh_params_from_json(const nlohmann::json& j) {
    LshParams p;
    p.num_perm = j.at("num_perm").get<std::size_t>();
    p.bands = j.at("bands").get<std::size_t>();
    p.rows = j.at("rows").get<std::size_t>();
    p.threshold = j.at("threshold").get<double>();
    return p;
}

double collision_probability(double j, std::size_t bands, std::size_t rows) {
    return 1.0 - std::pow(1.0 - std::pow(j, static_cast<double>(rows)), static_cast<double>(bands));
}

double s_curve_midpoint(std::size_t bands, std::size_t rows) {
    return std::pow(1.0 / static_cast<double>(bands), 1.0 / static_cast<double>(rows));
}

namespace {

template <typename F>
double simpson(F&& f, double lo, double hi, int intervals = 400) {
    if (hi <= lo) return 0.0;
    const double h = (hi - lo) / intervals;
    double sum = f(lo) + f(hi);
    for (int i = 1; i < intervals; ++i) sum += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return sum * h / 3.0;
}

}  // namespace

double banding_error(std::size_t bands, std::size_t rows, double threshold,
                     const BandWeights& weights) {
    const double fp =
        simpson([&](double s) { return collision_probability(s, bands, rows); }, 0.0, threshold);
    const double fn = simpson([&](double s) { return 1.0 - collision_probability(s, bands, rows); },
                              threshold, 1.0);
    return weights.false_positive * fp + weights.false_negative * fn;
}

LshParams plan_bands(std::size_t num_perm, double threshold, const BandWeights& weights) {
    if (num_perm < kMinPermutations) {
        throw UsageError("plan_bands: num_perm must be >= " + std::to_string(kMinPermutations));
    }
    if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("plan_bands: threshold must lie in (0, 1)");

    // The search costs ~10^6 integrals; every stage asks again for the stamp.
    using Key = std::tuple<std::size_t, double, double, double>;
    static std::mutex cache_mutex;
    static std::map<Key, LshParams> cache;
    const Key key{num_perm, threshold, weights.false_positive, weights.false_negative};
    {
        std::lock_guard lock(cache_mutex);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
    }

    LshParams best{num_perm, 1, 1, threshold};
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t b = 1; b <= num_perm; ++b) {
        for (std::size_t r = 1; b * r <= num_perm; ++r) {
            const double err = banding_error(b, r, threshold, weights);
            if (err < best_err) {
                best_err = err;
                best.bands = b;
                best.rows = r;
            }
        }
    }
    std::lock_guard lock(cache_mutex);
    cache.emplace(key, best);
    return best;
}

// ---- LshIndex ------------------------------------------------------------------

LshIndex::LshIndex(LshParams params, std::uint64_t seed)
    : LshIndex(params, seed, 0, params.bands) {}

LshIndex::LshIndex(LshParams params, std::uint64_t seed, std::size_t band_begin,
                   std::size_t band_end)
    : params_(params), seed_(seed), band_begin_(band_begin) {
    validate(params_);
    if (band_begin > band_end || band_end > params_.bands) {
        throw UsageError("band range out of bounds");
    }
    buckets_.resize(band_end - band_begin);
}

void LshIndex::check_signature(const MinHashSignature& sig) const {
    if (sig.num_perm() != params_.num_perm || sig.seed != seed_) {
        throw DataError("signature has num_perm " + std::to_string(sig.num_perm()) + " / seed " +
                        std::to_string(sig.seed) + ", index expects " +
                        std::to_string(params_.num_perm) + " / " + std::to_string(seed_));
    }
}

std::uint64_t LshIndex::band_key(std::size_t band, const MinHashSignature& sig) const {
    std::uint64_t h = mix64(seed_ ^ mix64(0x5bd1e995ULL + band));
    const std::size_t begin = band * params_.rows;
    for (std::size_t i = begin; i < begin + params_.rows; ++i) h = hash_combine(h, sig.mins[i]);
    return h;
}

std::uint32_t LshIndex::add(std::string key, const MinHashSignature& sig) {
    if (finalized_) throw UsageError("LshIndex::add after finalize");
    check_signature(sig);
    if (keys_.size() >= std::numeric_limits<std::uint32_t>::max()) {
        throw DataError("index holds too many documents");
    }
    const auto ordinal = static_cast<std::uint32_t>(keys_.size());
    keys_.push_back(std::move(key));
    for (std::size_t i = 0; i < buckets_.size(); ++i) {
        buckets_[i][band_key(band_begin_ + i, sig)].push_back(ordinal);
    }
    return ordinal;
}

std::vector<std::uint32_t> LshIndex::query_ordinals(const MinHashSignature& sig) const {
    if (sig.num_perm() != params_.num_perm || sig.seed != seed_) {
        throw UsageError("query signature does not match index num_perm/seed");
    }
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < buckets_.size(); ++i) {
        const auto& table = buckets_[i];
        if (auto it = table.find(band_key(band_begin_ + i, sig)); it != table.end()) {
            out.insert(out.end(), it->second.begin(), it->second.end());
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<std::string> LshIndex::query(const MinHashSignature& sig,
                                         std::string_view exclude_key) const {
    std::vector<std::string> out;
    for (std::uint32_t ord : query_ordinals(sig)) {
        if (!exclude_key.empty() && keys_[ord] == exclude_key) continue;
        out.push_back(keys_[ord]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t LshIndex::bucket_count(std::size_t band) const {
    if (band < band_begin_ || band >= band_end()) throw UsageError("band not loaded");
    return buckets_[band - band_begin_].size();
}

std::size_t LshIndex::total_membership() const {
    std::size_t total = 0;
    for (const auto& table : buckets_) {
        for (const auto& [key, members] : table) total += members.size();
    }
    return total;
}

std::span<const std::uint32_t> LshIndex::bucket(std::size_t band, std::uint64_t key) const {
    if (band < band_begin_ || band >= band_end()) throw UsageError("band not loaded");
    const auto& table = buckets_[band - band_begin_];
    if (auto it = table.find(key); it != table.end()) return it->second;
    return {};
}

// ---- persistence -----------------------------------------------------------------
//
// Band file layout (little-endian):
//   char[8]  magic "DLBAND01"
//   u32      band index
//   u32      rows per band
//   u64      number of buckets
//   then per bucket, in ascending key order:
//     u64 key, u32 member count, u32 member ordinal * count

namespace {

constexpr char kBandMagic[8] = {'D', 'L', 'B', 'A', 'N', 'D', '0', '1'};

std::filesystem::path band_path(const std::filesystem::path& dir, std::size_t band) {
    char name[32];
    std::snprintf(name, sizeof name, "band_%04zu.bin", band);
    return dir / name;
}

template <typename T>
void put(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof value);
    if (!in) throw DataError(path.string() + ": truncated band file");
    return value;
}

void write_band(const std::filesystem::path& path, std::size_t band, std::size_t rows,
                const std::unordered_map<std::uint64_t, std::vector<std::uint32_t>>& table) {
    std::vector<std::uint64_t> keys;
    keys.reserve(table.size());
    for (const auto& [k, v] : table) keys.push_back(k);
    std::sort(keys.begin(), keys.end());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(kBandMagic, sizeof kBandMagic);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(band));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(rows));
    put<std::uint64_t>(out, keys.size());
    for (std::uint64_t k : keys) {
        const auto& members = table.at(k);
        put<std::uint64_t>(out, k);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(members.size()));
        out.write(reinterpret_cast<const char*>(members.data()),
                  static_cast<std::streamsize>(members.size() * sizeof(std::uint32_t)));
    }
    if (!out) throw DataError("write failed: " + path.string());
}

void write_keys(const std::filesystem::path& dir, const std::vector<std::string>& keys,
                const nlohmann::json& config) {
    JsonlWriter out(dir / "doc_keys.jsonl");
    out.write(make_header("detectleak.index_keys", kIndexVersion, config, {{"count", keys.size()}}));
    for (const auto& k : keys) out.write(nlohmann::json{{"key", k}});
    out.close();
}

nlohmann::json index_header(const LshParams& params, std::uint64_t seed, std::size_t doc_count,
                            std::size_t shards, const nlohmann::json& config) {
    return {{"format", kIndexFormat},
            {"version", kIndexVersion},
            {"params", to_json(params)},
            {"seed", seed},
            {"doc_count", doc_count},
            {"shards", shards},
            {"band_midpoint", s_curve_midpoint(params.bands, params.rows)},
            {"config", config}};
}

}  // namespace

void LshIndex::save(const std::filesystem::path& dir, const nlohmann::json& config) const {
    if (band_begin_ != 0 || buckets_.size() != params_.bands) {
        throw UsageError("only a full index can be saved");
    }
    std::filesystem::create_directories(dir);
    for (std::size_t band = 0; band < params_.bands; ++band) {
        write_band(band_path(dir, band), band, params_.rows, buckets_[band]);
    }
    write_keys(dir, keys_, config);
    write_json_file(dir / "header.json", index_header(params_, seed_, keys_.size(), 1, config));
}

nlohmann::json read_index_header(const std::filesystem::path& dir) {
    auto header = read_json_file(dir / "header.json");
    if (header.value("format", "") != kIndexFormat) {
        throw DataError(dir.string() + ": not an LSH index directory");
    }
    if (header.value("version", 0) != kIndexVersion) {
        throw DataError(dir.string() + ": unsupported index version");
    }
    return header;
}

LshIndex LshIndex::load(const std::filesystem::path& dir, std::size_t band_begin,
                        std::optional<std::size_t> band_end) {
    const auto header = read_index_header(dir);
    const LshParams params = lsh_params_from_json(header.at("params"));
    const auto seed = header.at("seed").get<std::uint64_t>();
    LshIndex index(params, seed, band_begin, band_end.value_or(params.bands));

    read_artifact(dir / "doc_keys.jsonl", "detectleak.index_keys", [&](const nlohmann::json& rec) {
        index.keys_.push_back(rec.at("key").get<std::string>());
    });
    if (index.keys_.size() != header.at("doc_count").get<std::size_t>()) {
        throw DataError(dir.string() + ": doc_keys.jsonl does not match doc_count");
    }

    for (std::size_t band = index.band_begin(); band < index.band_end(); ++band) {
        const auto path = band_path(dir, band);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot read " + path.string());
        char magic[8];
        in.read(magic, sizeof magic);
        if (!in || std::memcmp(magic, kBandMagic, sizeof magic) != 0) {
            throw DataError(path.string() + ": bad band file magic");
        }
        if (get<std::uint32_t>(in, path) != band || get<std::uint32_t>(in, path) != params.rows) {
            throw DataError(path.string() + ": band header mismatch");
        }
        const auto n = get<std::uint64_t>(in, path);
        auto& table = index.buckets_[band - index.band_begin()];
        table.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            const auto key = get<std::uint64_t>(in, path);
            const auto count = get<std::uint32_t>(in, path);
            std::vector<std::uint32_t> members(count);
            in.read(reinterpret_cast<char*>(members.data()),
                    static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
            if (!in) throw DataError(path.string() + ": truncated band file");
            for (auto m : members) {
                if (m >= index.keys_.size()) throw DataError(path.string() + ": ordinal out of range");
            }
            table.emplace(key, std::move(members));
        }
    }
    index.finalize();
    return index;
}

LshIndex build_index(std::span<const SignedDocument> signatures, const LshParams& params,
                     std::uint64_t seed) {
    LshIndex index(params, seed);
    for (const auto& doc : signatures) index.add(doc.doc_id, doc.signature);
    index.finalize();
    return index;
}

void build_index_sharded(const std::filesystem::path& dir, const LshParams& params,
                         std::uint64_t seed, std::size_t shards, const SignatureSource& source,
                         const nlohmann::json& config) {
    validate(params);
    shards = std::clamp<std::size_t>(shards, 1, params.bands);
    std::filesystem::create_directories(dir);
    const std::size_t per_shard = (params.bands + shards - 1) / shards;
    std::vector<std::string> keys;
    for (std::size_t begin = 0; begin < params.bands; begin += per_shard) {
        const std::size_t end = std::min(params.bands, begin + per_shard);
        LshIndex part(params, seed, begin, end);
        source([&](const std::string& key, const MinHashSignature& sig) { part.add(key, sig); });
        if (begin == 0) {
            keys = part.keys();
        } else if (part.keys() != keys) {
            throw DataError("signature source is not stable across shards");
        }
        for (std::size_t band = begin; band < end; ++band) {
            write_band(band_path(dir, band), band, params.rows, part.buckets_[band - begin]);
        }
    }
    write_keys(dir, keys, config);
    write_json_file(dir / "header.json", index_header(params, seed, keys.size(), shards, config));
}

}  // namespace detectleak

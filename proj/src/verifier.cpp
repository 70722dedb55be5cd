#include "detectleak/verifier.hpp"

#include <algorithm>
#include <mutex>
#include <set>

#include "detectleak/error.hpp"
#include "detectleak/hash.hpp"
#include "detectleak/jsonl.hpp"
#include "detectleak/log.hpp"
#include "detectleak/parallel.hpp"

namespace detectleak {

std::string_view to_string(PairStatus status) {
    switch (status) {
        case PairStatus::candidate: return "candidate";
        case PairStatus::flagged: return "flagged";
        case PairStatus::labeled: return "labeled";
        case PairStatus::adjudicated: return "adjudicated";
    }
    return "?";
}

std::string_view to_string(Suggestion suggestion) {
    return suggestion == Suggestion::exact_copy_hint ? "exact_copy_hint" : "none";
}

Suggestion parse_suggestion(std::string_view text) {
    if (text == "exact_copy_hint") return Suggestion::exact_copy_hint;
    if (text == "none" || text.empty()) return Suggestion::none;
    throw DataError("unknown suggestion '" + std::string(text) + "'");
}

std::string make_pair_id(const DocRef& bench, const DocRef& corpus) {
    std::uint64_t h = kFnvOffset;
    h = fnv1a_update(h, bench.dataset);
    h = fnv1a_update(h, std::uint8_t{0x1f});
    h = fnv1a_update(h, bench.doc_id);
    h = fnv1a_update(h, std::uint8_t{0x1e});
    h = fnv1a_update(h, corpus.dataset);
    h = fnv1a_update(h, std::uint8_t{0x1f});
    h = fnv1a_update(h, corpus.doc_id);
    return to_hex(mix64(h));
}

CandidatePair make_candidate(const DocRef& bench, const DocRef& corpus) {
    CandidatePair p;
    p.pair_id = make_pair_id(bench, corpus);
    p.bench = bench;
    p.corpus = corpus;
    return p;
}

namespace {

bool by_pair_id(const CandidatePair& a, const CandidatePair& b) {
    return std::tie(a.pair_id, a.bench, a.corpus) < std::tie(b.pair_id, b.bench, b.corpus);
}

}  // namespace

VerifyResult verify(std::span<const CandidatePair> candidates, const FeatureLookup& features,
                    double threshold) {
    VerifyResult result;
    for (const auto& cand : candidates) {
        ++result.stats.checked;
        const DocFeatures* bench = features(Origin::benchmark, cand.bench);
        const DocFeatures* corpus = features(Origin::corpus, cand.corpus);
        if (bench == nullptr || corpus == nullptr) {
            ++result.stats.quarantined;
            result.quarantined.push_back(
                {cand, bench == nullptr ? "missing benchmark shingles" : "missing corpus shingles"});
            continue;
        }
        CandidatePair pair = cand;
        try {
            pair.exact_jaccard = exact_jaccard(bench->shingles, corpus->shingles);
            if (!bench->signature.mins.empty() && !corpus->signature.mins.empty()) {
                pair.est_jaccard = estimate_jaccard(bench->signature, corpus->signature);
            }
        } catch (const UsageError& e) {
            ++result.stats.quarantined;
            result.quarantined.push_back({cand, e.what()});
            continue;
        }
        if (pair.exact_jaccard >= threshold) {
            pair.status = PairStatus::flagged;
            pair.suggested =
                bench->text == corpus->text ? Suggestion::exact_copy_hint : Suggestion::none;
            result.flagged.push_back(std::move(pair));
            ++result.stats.flagged;
        } else {
            ++result.stats.dropped;
        }
    }
    std::sort(result.flagged.begin(), result.flagged.end(), by_pair_id);
    return result;
}

nlohmann::json to_json(const ScanStats& s) {
    return {{"benchmark", s.benchmark},
            {"benchmark_docs", s.benchmark_docs},
            {"corpus_docs", s.corpus_docs},
            {"exhaustive_pairs", s.exhaustive_pairs},
            {"candidates", s.candidates},
            {"comparisons_avoided", s.comparisons_avoided},
            {"flagged", s.flagged},
            {"dropped", s.dropped},
            {"quarantined", s.quarantined},
            {"flagged_benchmark_docs", s.flagged_benchmark_docs}};
}

void collect_candidates(std::span<const SignedDocument> bench, const LshIndex& index,
                        CandidateLists& lists, std::size_t jobs) {
    if (lists.empty()) lists.resize(bench.size());
    if (lists.size() != bench.size()) throw UsageError("candidate lists do not match benchmark size");
    parallel_for(bench.size(), jobs, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto found = index.query_ordinals(bench[i].signature);
            auto& into = lists[i];
            if (into.empty()) {
                into = std::move(found);
                continue;
            }
            std::vector<std::uint32_t> merged;
            merged.reserve(into.size() + found.size());
            std::set_union(into.begin(), into.end(), found.begin(), found.end(),
                           std::back_inserter(merged));
            into = std::move(merged);
        }
    });
}

ScanResult verify_candidates(std::string_view benchmark, std::span<const SignedDocument> bench,
                             const CandidateLists& lists, std::span<const std::string> corpus_keys,
                             const FeatureLookup& features, double threshold, std::size_t jobs) {
    if (lists.size() != bench.size()) throw UsageError("candidate lists do not match benchmark size");
    ScanResult result;
    auto& stats = result.stats;
    stats.benchmark = std::string(benchmark);
    stats.benchmark_docs = bench.size();
    stats.corpus_docs = corpus_keys.size();
    stats.exhaustive_pairs =
        static_cast<std::uint64_t>(bench.size()) * static_cast<std::uint64_t>(corpus_keys.size());

    std::vector<CandidatePair> candidates;
    for (std::size_t i = 0; i < bench.size(); ++i) {
        const DocRef bench_ref{std::string(benchmark), bench[i].doc_id};
        for (std::uint32_t ord : lists[i]) {
            if (ord >= corpus_keys.size()) throw DataError("candidate ordinal out of range");
            candidates.push_back(make_candidate(bench_ref, parse_doc_key(corpus_keys[ord])));
        }
    }
    stats.candidates = candidates.size();
    stats.comparisons_avoided = stats.exhaustive_pairs - stats.candidates;

    if (bench.empty()) {
        log_warn("scan.empty_benchmark", {{"benchmark", benchmark}});
        return result;
    }

    std::mutex merge;
    parallel_for(candidates.size(), jobs, [&](std::size_t begin, std::size_t end) {
        auto part = verify(std::span(candidates).subspan(begin, end - begin), features, threshold);
        std::lock_guard lock(merge);
        for (auto& p : part.flagged) result.flagged.push_back(std::move(p));
        for (auto& q : part.quarantined) result.quarantined.push_back(std::move(q));
        stats.dropped += part.stats.dropped;
    });
    std::sort(result.flagged.begin(), result.flagged.end(), by_pair_id);
    std::sort(result.quarantined.begin(), result.quarantined.end(),
              [](const auto& a, const auto& b) { return by_pair_id(a.pair, b.pair); });
    stats.flagged = result.flagged.size();
    stats.quarantined = result.quarantined.size();
    std::set<std::string> docs;
    for (const auto& p : result.flagged) docs.insert(p.bench.doc_id);
    stats.flagged_benchmark_docs = docs.size();
    return result;
}

ScanResult scan(std::string_view benchmark, std::span<const SignedDocument> bench,
                const LshIndex& index, const FeatureLookup& features, double threshold,
                std::size_t jobs) {
    if (index.band_begin() != 0 || index.band_end() != index.params().bands) {
        throw UsageError("scan needs an index with every band loaded");
    }
    CandidateLists lists;
    collect_candidates(bench, index, lists, jobs);
    return verify_candidates(benchmark, bench, lists, index.keys(), features, threshold, jobs);
}

// ---- flagged-pairs file ----------------------------------------------------------

nlohmann::json to_json(const CandidatePair& p) {
    return {{"pair_id", p.pair_id},
            {"bench_id", p.bench.doc_id},
            {"corpus_id", p.corpus.doc_id},
            {"est_j", p.est_jaccard},
            {"exact_j", p.exact_jaccard},
            {"suggested", to_string(p.suggested)},
            {"bench_dataset", p.bench.dataset},
            {"corpus_dataset", p.corpus.dataset}};
}

CandidatePair candidate_from_json(const nlohmann::json& j) {
    CandidatePair p;
    p.pair_id = j.at("pair_id").get<std::string>();
    p.bench = {j.value("bench_dataset", std::string()), j.at("bench_id").get<std::string>()};
    p.corpus = {j.value("corpus_dataset", std::string()), j.at("corpus_id").get<std::string>()};
    p.est_jaccard = j.value("est_j", 0.0);
    p.exact_jaccard = j.at("exact_j").get<double>();
    p.suggested = parse_suggestion(j.value("suggested", std::string("none")));
    p.status = PairStatus::flagged;
    return p;
}

void write_flagged(const std::filesystem::path& path, std::span<const CandidatePair> pairs,
                   const nlohmann::json& config, const nlohmann::json& extra) {
    JsonlWriter out(path);
    nlohmann::json header_extra = extra.is_object() ? extra : nlohmann::json::object();
    header_extra["count"] = pairs.size();
    out.write(make_header(kFlaggedFormat, kFlaggedVersion, config, header_extra));
    for (const auto& p : pairs) out.write(to_json(p));
    out.close();
}

std::vector<CandidatePair> read_flagged(const std::filesystem::path& path, nlohmann::json* header) {
    std::vector<CandidatePair> pairs;
    auto h = read_artifact(path, kFlaggedFormat,
                           [&](const nlohmann::json& rec) { pairs.push_back(candidate_from_json(rec)); });
    if (header) *header = std::move(h);
    return pairs;
}

void write_quarantine(const std::filesystem::path& path,
                      std::span<const QuarantinedCandidate> quarantined,
                      const nlohmann::json& config) {
    JsonlWriter out(path);
    out.write(make_header("detectleak.quarantine", 1, config, {{"count", quarantined.size()}}));
    for (const auto& q : quarantined) {
        auto rec = to_json(q.pair);
        rec["reason"] = q.reason;
        out.write(rec);
    }
    out.close();
}

}  // namespace detectleak

#include "detectleak/ppl.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "detectleak/error.hpp"
#include "detectleak/jsonl.hpp"
#include "detectleak/log.hpp"

namespace detectleak {

namespace {

bool valid_ppl(double v) { return std::isfinite(v) && v > 0.0; }

std::size_t parse_count(const std::string& s) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        throw UsageError("not a non-negative integer: '" + s + "'");
    }
    if (used != s.size() || s.empty() || s[0] == '-') {
        throw UsageError("not a non-negative integer: '" + s + "'");
    }
    return static_cast<std::size_t>(v);
}

// Ranking order: perplexity ascending, then sample_id.
bool ranks_before(const PerplexityRecord& a, const PerplexityRecord& b) {
    if (a.perplexity != b.perplexity) return a.perplexity < b.perplexity;
    return a.sample_id < b.sample_id;
}

}  // namespace

std::vector<PerplexityRecord> load_scores(const std::filesystem::path& path, ScoreLoadStats* stats) {
    ScoreLoadStats local;
    std::vector<PerplexityRecord> out;
    std::set<std::string> seen;
    for_each_line(path, [&](std::size_t lineno, const std::string& line) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) return;
        if (parse_header(line)) return;
        auto j = json::parse(line, nullptr, false);
        const bool shaped = !j.is_discarded() && j.is_object() && j.contains("id") &&
                            j["id"].is_string() && j.contains("gold") && j["gold"].is_string() &&
                            j.contains("ppl");
        Gold gold = Gold::non_leaked;
        bool ok = shaped;
        if (ok) {
            const auto g = j["gold"].get<std::string>();
            if (g == "leaked") gold = Gold::leaked;
            else if (g != "non_leaked") ok = false;
        }
        if (!ok) {
            ++local.rejected_malformed;
            log_warn("score_malformed", {{"path", path.string()}, {"line", lineno}});
            return;
        }
        // JSON cannot carry NaN/Inf, so non-finite scores arrive as null or strings.
        double ppl = std::nan("");
        if (j["ppl"].is_number()) ppl = j["ppl"].get<double>();
        else if (j["ppl"].is_string()) {
            try {
                ppl = std::stod(j["ppl"].get<std::string>());
            } catch (const std::exception&) {
            }
        }
        if (!valid_ppl(ppl)) {
            ++local.rejected_nonfinite;
            log_warn("score_rejected", {{"path", path.string()}, {"line", lineno}});
            return;
        }
        auto id = j["id"].get<std::string>();
        if (!seen.insert(id).second) throw DataError("duplicate sample id '" + id + "' in " + path.string());
        out.push_back({std::move(id), gold, ppl});
        ++local.accepted;
    });
    if (stats) *stats = local;
    return out;
}

std::vector<PerplexityRecord> rank_ascending(std::vector<PerplexityRecord> records) {
    for (const auto& r : records) {
        if (!valid_ppl(r.perplexity)) throw UsageError("perplexity must be finite and positive: " + r.sample_id);
    }
    std::stable_sort(records.begin(), records.end(), ranks_before);
    return records;
}

namespace {

double leaked_share(const std::vector<PerplexityRecord>& ranked, std::size_t k) {
    std::size_t leaked = 0;
    for (std::size_t i = 0; i < k; ++i) leaked += ranked[i].gold == Gold::leaked;
    return static_cast<double>(leaked) / static_cast<double>(k);
}

void check_k(std::size_t k, std::size_t n) {
    if (k < 1 || k > n) {
        throw UsageError("k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    }
}

}  // namespace

double topk_accuracy(std::span<const PerplexityRecord> records, std::size_t k) {
    check_k(k, records.size());
    const auto ranked = rank_ascending({records.begin(), records.end()});
    return leaked_share(ranked, k);
}

std::vector<std::size_t> default_ks(std::size_t record_count) {
    std::vector<std::size_t> ks;
    for (std::size_t k = 100; k <= 1000 && k <= record_count; k += 100) ks.push_back(k);
    if (ks.empty() && record_count > 0) ks.push_back(record_count);
    return ks;
}

std::vector<std::size_t> parse_ks(const std::string& spec) {
    std::vector<std::size_t> ks;
    if (spec.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::stringstream ss(spec);
        for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
        if (parts.size() != 3) throw UsageError("ks range must be start:stop:step, got '" + spec + "'");
        const auto start = parse_count(parts[0]), stop = parse_count(parts[1]), step = parse_count(parts[2]);
        if (step == 0 || start == 0 || start > stop) throw UsageError("invalid ks range '" + spec + "'");
        for (std::size_t k = start; k <= stop; k += step) ks.push_back(k);
    } else {
        std::stringstream ss(spec);
        for (std::string p; std::getline(ss, p, ',');) ks.push_back(parse_count(p));
    }
    if (ks.empty()) throw UsageError("no k values in '" + spec + "'");
    return ks;
}

std::vector<std::pair<std::size_t, double>> accuracy_curve(std::span<const PerplexityRecord> records,
                                                           std::span<const std::size_t> ks) {
    for (auto k : ks) check_k(k, records.size());
    const auto ranked = rank_ascending({records.begin(), records.end()});
    std::vector<std::pair<std::size_t, double>> curve;
    curve.reserve(ks.size());
    for (auto k : ks) curve.emplace_back(k, leaked_share(ranked, k));
    return curve;
}

std::vector<PerplexityRecord> trim_outliers(std::span<const PerplexityRecord> records, double top_pct) {
    if (!(top_pct >= 0.0 && top_pct < 1.0)) throw UsageError("top_pct must lie in [0, 1)");
    std::vector<bool> dropped(records.size(), false);
    for (Gold g : {Gold::leaked, Gold::non_leaked}) {
        std::vector<std::size_t> cls;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (records[i].gold == g) cls.push_back(i);
        }
        std::stable_sort(cls.begin(), cls.end(),
                         [&](std::size_t a, std::size_t b) { return ranks_before(records[b], records[a]); });
        // Tolerance keeps exact products such as 0.02 * 100 from rounding up.
        const double raw = top_pct * static_cast<double>(cls.size());
        const auto drop = std::min(static_cast<std::size_t>(std::max(0.0, std::ceil(raw - 1e-9))), cls.size());
        for (std::size_t i = 0; i < drop; ++i) dropped[cls[i]] = true;
    }
    std::vector<PerplexityRecord> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!dropped[i]) out.push_back(records[i]);
    }
    return out;
}

Histogram distribution_export(std::span<const PerplexityRecord> records, std::size_t bins) {
    if (bins < 1) throw UsageError("bins must be >= 1");
    Histogram h;
    h.bins = bins;
    h.leaked.assign(bins, 0);
    h.non_leaked.assign(bins, 0);
    if (records.empty()) return h;
    auto [mn, mx] = std::minmax_element(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return a.perplexity < b.perplexity;
    });
    h.lo = mn->perplexity;
    h.hi = mx->perplexity;
    const double width = h.bin_width();
    for (const auto& r : records) {
        std::size_t bin = 0;
        if (width > 0.0) {
            bin = static_cast<std::size_t>((r.perplexity - h.lo) / width);
            bin = std::min(bin, bins - 1);
        }
        (r.gold == Gold::leaked ? h.leaked : h.non_leaked)[bin]++;
    }
    return h;
}

nlohmann::json to_json(const Histogram& h) {
    nlohmann::json edges = nlohmann::json::array();
    for (std::size_t i = 0; i <= h.bins; ++i) edges.push_back(h.lo + h.bin_width() * static_cast<double>(i));
    return {{"lo", h.lo},         {"hi", h.hi},       {"bins", h.bins},
            {"edges", edges},     {"leaked", h.leaked}, {"non_leaked", h.non_leaked}};
}

}  // namespace detectleak

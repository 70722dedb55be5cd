#include "detectleak/report.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "detectleak/error.hpp"
#include "detectleak/jsonl.hpp"
#include "detectleak/log.hpp"
#include "detectleak/shuffle.hpp"

namespace detectleak {

std::string format_percent(std::size_t count, std::size_t n_total) {
    if (n_total == 0) throw DataError("leakage ratio undefined for an empty benchmark");
    if (count == 0) return "0%";
    using u128 = unsigned __int128;
    // round_half_up(count * 1000 / n_total), in tenths of a percent
    const u128 tenths = (static_cast<u128>(count) * 2000 + n_total) / (static_cast<u128>(n_total) * 2);
    const auto whole = static_cast<unsigned long long>(tenths / 10);
    const auto frac = static_cast<unsigned>(tenths % 10);
    return std::to_string(whole) + "." + std::to_string(frac) + "%";
}

LeakageMetrics leakage_metrics(std::size_t n_total, std::size_t leaked_count) {
    if (n_total == 0) throw DataError("leakage ratio undefined: n_total is 0");
    if (leaked_count > n_total) {
        throw DataError("leaked count " + std::to_string(leaked_count) + " exceeds benchmark size " +
                        std::to_string(n_total));
    }
    return {leaked_count, n_total,
            static_cast<double>(leaked_count) / static_cast<double>(n_total),
            format_percent(leaked_count, n_total)};
}

LeakageMetrics leakage_metrics(std::size_t n_total, const std::set<std::string>& leaked) {
    return leakage_metrics(n_total, leaked.size());
}

std::vector<RepoCount> repo_aggregation(std::span<const std::optional<std::string>> pair_repos) {
    std::map<std::string, std::size_t> counts;
    for (const auto& repo : pair_repos) ++counts[repo.value_or(kUnknownRepo)];
    std::vector<RepoCount> out;
    out.reserve(counts.size());
    for (auto& [repo, n] : counts) out.push_back({repo, n});
    std::stable_sort(out.begin(), out.end(),
                     [](const RepoCount& a, const RepoCount& b) { return a.count > b.count; });
    return out;
}

namespace {

std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

}  // namespace

std::vector<KeywordMatches> keyword_scan(std::span<const std::string> repo_paths,
                                         std::span<const std::string> keywords) {
    if (keywords.empty()) throw UsageError("keyword_scan needs at least one keyword");
    std::vector<std::string> repos;
    for (const auto& r : repo_paths) {
        if (std::find(repos.begin(), repos.end(), r) == repos.end()) repos.push_back(r);
    }
    std::vector<KeywordMatches> out;
    for (const auto& kw : keywords) {
        KeywordMatches m{kw, {}};
        const std::string needle = ascii_lower(kw);
        for (const auto& r : repos) {
            if (ascii_lower(r).find(needle) != std::string::npos) m.repos.push_back(r);
        }
        out.push_back(std::move(m));
    }
    return out;
}

CleanResult emit_clean(const std::filesystem::path& input,
                       const std::map<std::string, std::vector<std::string>>& leaked,
                       const std::filesystem::path& output,
                       const std::optional<std::filesystem::path>& manifest_path,
                       const nlohmann::json& config) {
    std::ifstream in(input, std::ios::binary);
    if (!in) throw DataError("cannot read " + input.string());
    const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    // Lines keep their terminators so kept records are copied byte for byte.
    struct Line {
        std::string_view bytes;
        std::optional<std::string> id;
    };
    std::vector<Line> lines;
    for (std::size_t pos = 0; pos < content.size();) {
        auto nl = content.find('\n', pos);
        const std::size_t end = nl == std::string::npos ? content.size() : nl + 1;
        Line line{std::string_view(content).substr(pos, end - pos), std::nullopt};
        auto j = nlohmann::json::parse(line.bytes, nullptr, false);
        if (!j.is_discarded() && j.is_object()) {
            if (auto id = j.find("id"); id != j.end() && id->is_string()) line.id = id->get<std::string>();
        }
        lines.push_back(line);
        pos = end;
    }

    std::set<std::string> present;
    for (const auto& l : lines) {
        if (l.id) present.insert(*l.id);
    }
    for (const auto& [id, pairs] : leaked) {
        if (!present.count(id)) {
            throw DataError("leaked id '" + id + "' does not occur in " + input.string());
        }
    }

    CleanResult result;
    if (output.has_parent_path()) std::filesystem::create_directories(output.parent_path());
    std::ofstream out(output, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + output.string());
    for (const auto& l : lines) {
        ++result.input_records;
        if (l.id) {
            if (auto it = leaked.find(*l.id); it != leaked.end()) {
                result.removed.push_back({*l.id, it->second});
                continue;
            }
        }
        out.write(l.bytes.data(), static_cast<std::streamsize>(l.bytes.size()));
        ++result.kept;
    }
    out.close();
    if (!out) throw DataError("write failed: " + output.string());

    if (manifest_path) {
        JsonlWriter m(*manifest_path);
        m.write(make_header("detectleak.removal_manifest", 1, config,
                            {{"source", input.string()},
                             {"removed", result.removed.size()},
                             {"kept", result.kept}}));
        for (const auto& r : result.removed) m.write({{"id", r.doc_id}, {"pair_ids", r.pair_ids}});
        m.close();
    }
    return result;
}

AutodetectSet build_autodetect(std::vector<LabeledSample> samples, std::uint64_t seed) {
    AutodetectSet set;
    set.input_samples = samples.size();

    std::vector<LabeledSample> unique;
    std::unordered_map<std::string, std::size_t> by_text;
    for (auto& s : samples) {
        auto [it, inserted] = by_text.emplace(s.text, unique.size());
        if (inserted) {
            unique.push_back(std::move(s));
        } else {
            unique[it->second].leaked = unique[it->second].leaked || s.leaked;
            ++set.duplicates_removed;
        }
    }

    std::vector<LabeledSample> leaked, clean;
    for (auto& s : unique) (s.leaked ? leaked : clean).push_back(std::move(s));
    set.leaked_available = leaked.size();
    set.non_leaked_available = clean.size();
    if (leaked.empty() || clean.empty()) {
        throw DataError("cannot balance: " + std::to_string(leaked.size()) + " leaked and " +
                        std::to_string(clean.size()) + " non-leaked samples after deduplication");
    }

    std::mt19937_64 rng(seed);
    auto& majority = leaked.size() >= clean.size() ? leaked : clean;
    auto& minority = leaked.size() >= clean.size() ? clean : leaked;
    set.per_class = minority.size();
    portable_shuffle(majority, rng);
    majority.resize(minority.size());

    set.samples = std::move(minority);
    for (auto& s : majority) set.samples.push_back(std::move(s));
    portable_shuffle(set.samples, rng);
    return set;
}

std::vector<LabeledSample> labeled_samples(const AnnotationStore& store) {
    std::map<DocRef, LabeledSample> docs;
    for (const auto& f : store.final_labels()) {
        auto it = docs.find(f.bench);
        if (it == docs.end()) {
            const auto pair = store.pair(f.pair_id);
            it = docs.emplace(f.bench, LabeledSample{f.bench.dataset, f.bench.doc_id,
                                                     pair ? pair->bench_text : std::string(), false})
                     .first;
        }
        if (collapse(f.final_label) == BinaryLabel::duplicate) it->second.leaked = true;
    }
    std::vector<LabeledSample> out;
    out.reserve(docs.size());
    for (auto& [ref, s] : docs) out.push_back(std::move(s));
    return out;
}

// ---- report -----------------------------------------------------------------------

LeakageReport build_report(const AnnotationStore& store, std::span<const std::string> keywords) {
    LeakageReport report;
    const auto& meta = store.meta();
    const auto leaked = store.leaked();
    const auto finals = store.final_labels();
    const auto progress = store.progress();

    std::map<std::string, std::size_t> manual;
    std::vector<std::optional<std::string>> repos;
    for (const auto& f : finals) {
        if (collapse(f.final_label) != BinaryLabel::duplicate) continue;
        ++manual[f.bench.dataset];
        repos.push_back(store.pair(f.pair_id)->corpus_repo);
    }

    const auto benchmarks = meta.value("benchmarks", nlohmann::json::object());
    for (auto it = benchmarks.begin(); it != benchmarks.end(); ++it) {
        BenchmarkRow row;
        row.dataset = it.key();
        row.n_total = it->value("n_total", std::size_t{0});
        row.n_auto = it->value("n_auto", std::size_t{0});
        row.n_manual = manual.count(row.dataset) ? manual.at(row.dataset) : 0;
        if (row.n_total == 0) {
            report.warnings.push_back(row.dataset + ": empty benchmark, ratio undefined");
            row.leakage = {0, 0, 0.0, "n/a"};
        } else {
            row.leakage = leakage_metrics(row.n_total, leaked_count(leaked, row.dataset));
        }
        if (auto p = it->find("published_ratio"); p != it->end() && p->is_string()) {
            row.published_ratio = p->get<std::string>();
            if (*row.published_ratio != row.leakage.percent) {
                report.warnings.push_back(row.dataset + ": published ratio " + *row.published_ratio +
                                          " disagrees with computed " + row.leakage.percent);
            }
        }
        report.benchmarks.push_back(std::move(row));
    }
    for (const auto& [dataset, docs] : leaked) {
        if (!benchmarks.contains(dataset)) {
            report.warnings.push_back(dataset + ": leaked samples for a benchmark missing from metadata");
        }
    }

    report.repos = repo_aggregation(repos);
    if (!keywords.empty()) {
        std::vector<std::string> names;
        for (const auto& r : report.repos) {
            if (r.repo != kUnknownRepo) names.push_back(r.repo);
        }
        report.keywords = keyword_scan(names, keywords);
    }
    if (const auto open = progress.total_pairs - progress.adjudicated; open > 0) {
        report.warnings.push_back(std::to_string(open) +
                                  " pairs still await labels or adjudication");
    }

    report.metadata = {
        {"generated", utc_timestamp()},
        {"config", meta.value("config", nlohmann::json::object())},
        {"store_created", meta.value("created", "")},
        {"progress", to_json(progress)},
        {"assumptions",
         {"whole records are compared; corpus files are not chunked",
          "leaked ratio = leaked_count / n_total, where n_total includes samples empty after "
          "normalization"}}};
    return report;
}

nlohmann::json to_json(const LeakageReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& b : r.benchmarks) {
        nlohmann::json row = {{"dataset", b.dataset},       {"n_total", b.n_total},
                              {"n_auto", b.n_auto},         {"n_manual", b.n_manual},
                              {"leaked_count", b.leakage.count}, {"leaked_ratio", b.leakage.ratio},
                              {"leaked_percent", b.leakage.percent}};
        if (b.published_ratio) row["published_ratio"] = *b.published_ratio;
        rows.push_back(row);
    }
    nlohmann::json repos = nlohmann::json::array();
    for (const auto& c : r.repos) repos.push_back({{"repo_path", c.repo}, {"duplicate_pair_count", c.count}});
    nlohmann::json keywords = nlohmann::json::array();
    for (const auto& k : r.keywords) {
        keywords.push_back({{"keyword", k.keyword}, {"count", k.count()}, {"repos", k.repos}});
    }
    return {{"benchmarks", rows},
            {"repos", repos},
            {"keywords", keywords},
            {"warnings", r.warnings},
            {"metadata", r.metadata}};
}

std::string to_markdown(const LeakageReport& r) {
    std::ostringstream md;
    md << "# Leakage report\n\n";
    const auto cfg = r.metadata.value("config", nlohmann::json::object());
    if (!cfg.empty()) md << "Config: `" << cfg.dump() << "`\n\n";
    md << "| Benchmark | Size | #Auto | #Manual | Leaked Count | Leaked Ratio |\n";
    md << "|---|---:|---:|---:|---:|---:|\n";
    for (const auto& b : r.benchmarks) {
        md << "| " << b.dataset << " | " << b.n_total << " | " << b.n_auto << " | " << b.n_manual
           << " | " << b.leakage.count << " | " << b.leakage.percent << " |\n";
    }
    if (!r.repos.empty()) {
        md << "\n## Repositories by duplicate pairs\n\n| Repository | #Duplicate Pairs |\n|---|---:|\n";
        for (const auto& c : r.repos) md << "| " << c.repo << " | " << c.count << " |\n";
    }
    if (!r.keywords.empty()) {
        md << "\n## Repository keyword scan\n\n| Keyword | Matches |\n|---|---:|\n";
        for (const auto& k : r.keywords) md << "| " << k.keyword << " | " << k.count() << " |\n";
    }
    if (!r.warnings.empty()) {
        md << "\n## Warnings\n\n";
        for (const auto& w : r.warnings) md << "- " << w << "\n";
    }
    return md.str();
}

}  // namespace detectleak

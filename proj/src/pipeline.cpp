#include "detectleak/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "detectleak/error.hpp"
#include "detectleak/hash.hpp"
#include "detectleak/jsonl.hpp"
#include "detectleak/log.hpp"
#include "detectleak/parallel.hpp"

namespace detectleak {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDocsFormat = "detectleak.documents";
constexpr std::size_t kSketchBatch = 4096;

std::string_view to_string(ShingleMode m) { return m == ShingleMode::word ? "word" : "character"; }

ShingleMode parse_shingle_mode(const std::string& s) {
    if (s == "word") return ShingleMode::word;
    if (s == "character" || s == "char") return ShingleMode::character;
    throw UsageError("unknown shingle mode '" + s + "'");
}

}  // namespace

// ---- config -----------------------------------------------------------------------

void validate(const RunConfig& c) {
    if (c.ngram_n < 1) throw UsageError("ngram_n must be >= 1");
    if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw UsageError("threshold must lie in (0, 1)");
    if (c.num_perm < kMinPermutations) {
        throw UsageError("num_perm must be >= " + std::to_string(kMinPermutations));
    }
    if (c.shard_count < 1) throw UsageError("shard_count must be >= 1");
    if (c.bands.has_value() != c.rows.has_value()) throw UsageError("bands and rows must be set together");
    if (c.bands) validate(LshParams{c.num_perm, *c.bands, *c.rows, c.threshold});
}

json to_json(const RunConfig& c) {
    json j = config_stamp(c);
    j["shard_count"] = c.shard_count;
    j["jobs"] = c.jobs;
    j["data_dir"] = c.data_dir.string();
    return j;
}

RunConfig config_from_json(const json& j, RunConfig c) {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    try {
        if (j.contains("ngram_n")) c.ngram_n = j["ngram_n"].get<std::size_t>();
        if (j.contains("shingle_mode")) c.shingle_mode = parse_shingle_mode(j["shingle_mode"].get<std::string>());
        if (j.contains("threshold")) c.threshold = j["threshold"].get<double>();
        if (j.contains("num_perm")) c.num_perm = j["num_perm"].get<std::size_t>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("shard_count")) c.shard_count = j["shard_count"].get<std::size_t>();
        if (j.contains("jobs")) c.jobs = j["jobs"].get<std::size_t>();
        if (j.contains("bands") && !j["bands"].is_null()) c.bands = j["bands"].get<std::size_t>();
        if (j.contains("rows") && !j["rows"].is_null()) c.rows = j["rows"].get<std::size_t>();
        if (j.contains("data_dir")) c.data_dir = j["data_dir"].get<std::string>();
        if (j.contains("policy")) c.policy = policy_from_json(j["policy"]);
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad config value: ") + e.what());
    }
    return c;
}

json config_stamp(const RunConfig& c) {
    const auto lsh = resolve_lsh_params(c);
    return {{"ngram_n", c.ngram_n},
            {"shingle_mode", to_string(c.shingle_mode)},
            {"threshold", c.threshold},
            {"num_perm", c.num_perm},
            {"seed", c.seed},
            {"bands", lsh.bands},
            {"rows", lsh.rows},
            {"policy", to_json(c.policy)}};
}

LshParams resolve_lsh_params(const RunConfig& c) {
    if (c.bands && c.rows) {
        LshParams p{c.num_perm, *c.bands, *c.rows, c.threshold};
        validate(p);
        return p;
    }
    return plan_bands(c.num_perm, c.threshold);
}

// ---- stages -----------------------------------------------------------------------

Pipeline::Pipeline(RunConfig config)
    : config_(std::move(config)), layout_{config_.data_dir}, index_dir_(layout_.index_dir()) {
    validate(config_);
    if (config_.data_dir.empty()) throw UsageError("data_dir is required");
}

std::vector<DatasetRecord> Pipeline::ingest(const std::vector<DatasetEntry>& manifest) {
    std::set<std::string> names;
    std::size_t corpora = 0, benchmarks = 0;
    for (const auto& e : manifest) {
        if (!is_valid_dataset_name(e.dataset)) throw UsageError("invalid dataset name '" + e.dataset + "'");
        if (!names.insert(e.dataset).second) throw UsageError("duplicate dataset name '" + e.dataset + "'");
        (e.origin == Origin::corpus ? corpora : benchmarks)++;
    }
    if (corpora == 0 || benchmarks == 0) {
        throw UsageError("manifest needs at least one corpus and one benchmark dataset");
    }

    fs::create_directories(layout_.root / "docs");
    write_json_file(layout_.config_file(), to_json(config_));
    const json stamp = config_stamp(config_);

    std::vector<DatasetRecord> records(manifest.size());
    parallel_for(manifest.size(), config_.jobs, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& e = manifest[i];
            IngestOptions opts;
            opts.origin = e.origin;
            opts.dataset = e.dataset;
            opts.text_field = e.text_field;
            opts.policy = config_.policy;
            opts.on_malformed = [&](std::size_t line, const std::string& reason) {
                log_warn("ingest.malformed", {{"dataset", e.dataset}, {"line", line}, {"reason", reason}});
            };
            JsonlWriter out(layout_.docs(e.dataset));
            out.write(make_header(kDocsFormat, 1, stamp,
                                  {{"dataset", e.dataset}, {"origin", to_string(e.origin)}}));
            const auto stats = detectleak::ingest(e.path, opts, [&](Document&& d) { out.write(to_json(d)); });
            out.close();
            records[i] = {e, stats};
            log_info("ingest.dataset", {{"dataset", e.dataset}, {"stats", to_json(stats)}});
        }
    });

    json list = json::array();
    for (const auto& r : records) list.push_back({{"entry", to_json(r.entry)}, {"stats", to_json(r.stats)}});
    write_json_file(layout_.datasets_file(), list);
    return records;
}

std::vector<DatasetRecord> Pipeline::datasets() const {
    if (!fs::exists(layout_.datasets_file())) throw DataError("no ingested datasets in " + layout_.root.string());
    std::vector<DatasetRecord> out;
    for (const auto& r : read_json_file(layout_.datasets_file())) {
        out.push_back({dataset_entry_from_json(r.at("entry")), stats_from_json(r.at("stats"))});
    }
    return out;
}

std::optional<DatasetRecord> Pipeline::dataset(const std::string& name) const {
    for (auto& r : datasets()) {
        if (r.entry.dataset == name) return r;
    }
    return std::nullopt;
}

namespace {

void for_each_document(const fs::path& path, Origin origin, const std::string& dataset,
                       const std::function<void(Document&&)>& cb) {
    read_artifact(path, kDocsFormat, [&](const json& j) { cb(document_from_json(j, origin, dataset)); });
}

}  // namespace

void Pipeline::sketch() {
    fs::create_directories(layout_.root / "sigs");
    const json stamp = config_stamp(config_);
    const MinHasher hasher(config_.num_perm, config_.seed);
    for (const auto& rec : datasets()) {
        const auto& ds = rec.entry.dataset;
        SignatureWriter out(layout_.signatures(ds), config_.num_perm, config_.seed, stamp);
        std::vector<Document> batch;
        std::vector<MinHashSignature> sigs;
        auto flush = [&] {
            sigs.assign(batch.size(), {});
            parallel_for(batch.size(), config_.jobs, [&](std::size_t b, std::size_t e) {
                for (std::size_t i = b; i < e; ++i) {
                    sigs[i] = hasher.sign(shingle(batch[i].text, config_.ngram_n, config_.shingle_mode));
                }
            });
            for (std::size_t i = 0; i < batch.size(); ++i) out.write(batch[i].doc_id, sigs[i]);
            batch.clear();
        };
        for_each_document(layout_.docs(ds), rec.entry.origin, ds, [&](Document&& d) {
            batch.push_back(std::move(d));
            if (batch.size() == kSketchBatch) flush();
        });
        flush();
        out.close();
        log_info("sketch.dataset", {{"dataset", ds}, {"docs", rec.stats.accepted}});
    }
}

LshParams Pipeline::build_index() {
    const auto params = resolve_lsh_params(config_);
    std::vector<std::string> corpora;
    for (const auto& r : datasets()) {
        if (r.entry.origin == Origin::corpus) corpora.push_back(r.entry.dataset);
    }
    SignatureSource source = [&](const auto& emit) {
        for (const auto& ds : corpora) {
            read_signatures(layout_.signatures(ds),
                            [&](SignedDocument&& s) { emit(doc_key({ds, s.doc_id}), s.signature); });
        }
    };
    fs::remove_all(index_dir_);
    build_index_sharded(index_dir_, params, config_.seed, config_.shard_count, source,
                        config_stamp(config_));
    log_info("index.built", {{"lsh", to_json(params)}, {"shards", config_.shard_count}});
    return params;
}

ScanStats Pipeline::scan(const std::string& benchmark, std::optional<double> threshold) {
    const auto rec = dataset(benchmark);
    if (!rec) throw UsageError("unknown dataset '" + benchmark + "'");
    if (rec->entry.origin != Origin::benchmark) throw UsageError("'" + benchmark + "' is not a benchmark");
    const double t = threshold.value_or(config_.threshold);
    if (!(t > 0.0 && t <= 1.0)) throw UsageError("threshold must lie in (0, 1]");

    // The band plan belongs to the index, not to the verification threshold.
    const auto params = lsh_params_from_json(read_index_header(index_dir_).at("params"));
    json stamp = config_stamp(config_);
    stamp["threshold"] = t;

    std::vector<SignedDocument> bench;
    read_signatures(layout_.signatures(benchmark), [&](SignedDocument&& s) { bench.push_back(std::move(s)); });

    // Band groups are loaded one at a time so peak memory tracks shard size.
    CandidateLists lists;
    std::vector<std::string> keys;
    const std::size_t shards = std::max<std::size_t>(1, std::min(config_.shard_count, params.bands));
    const std::size_t per = (params.bands + shards - 1) / shards;
    for (std::size_t b = 0; b < params.bands; b += per) {
        const auto index = LshIndex::load(index_dir_, b, std::min(params.bands, b + per));
        collect_candidates(bench, index, lists, config_.jobs);
        if (keys.empty()) keys = index.keys();
    }
    if (lists.empty()) lists.resize(bench.size());

    std::unordered_set<std::string> needed;
    for (const auto& l : lists) {
        for (auto ord : l) needed.insert(keys.at(ord));
    }

    std::unordered_map<std::string, DocFeatures> corpus_features, bench_features;
    auto featurize = [&](Document&& d, MinHashSignature sig) {
        DocFeatures f{shingle(d.text, config_.ngram_n, config_.shingle_mode), std::move(sig), std::move(d.text)};
        return f;
    };

    std::unordered_map<std::string, MinHashSignature> bench_sigs;
    for (const auto& s : bench) bench_sigs.emplace(s.doc_id, s.signature);
    for_each_document(layout_.docs(benchmark), Origin::benchmark, benchmark, [&](Document&& d) {
        auto id = d.doc_id;
        auto sig = bench_sigs.at(id);
        bench_features.emplace(std::move(id), featurize(std::move(d), std::move(sig)));
    });

    for (const auto& r : datasets()) {
        if (r.entry.origin != Origin::corpus) continue;
        const auto& ds = r.entry.dataset;
        std::unordered_map<std::string, MinHashSignature> sigs;
        read_signatures(layout_.signatures(ds), [&](SignedDocument&& s) {
            if (needed.count(doc_key({ds, s.doc_id}))) sigs.emplace(std::move(s.doc_id), std::move(s.signature));
        });
        for_each_document(layout_.docs(ds), Origin::corpus, ds, [&](Document&& d) {
            auto key = doc_key({ds, d.doc_id});
            if (!needed.count(key)) return;
            auto it = sigs.find(d.doc_id);
            MinHashSignature sig = it == sigs.end() ? MinHashSignature{} : std::move(it->second);
            corpus_features.emplace(std::move(key), featurize(std::move(d), std::move(sig)));
        });
    }

    FeatureLookup lookup = [&](Origin origin, const DocRef& ref) -> const DocFeatures* {
        if (origin == Origin::benchmark) {
            if (ref.dataset != benchmark) return nullptr;
            auto it = bench_features.find(ref.doc_id);
            return it == bench_features.end() ? nullptr : &it->second;
        }
        auto it = corpus_features.find(doc_key(ref));
        return it == corpus_features.end() ? nullptr : &it->second;
    };

    auto result = verify_candidates(benchmark, bench, lists, keys, lookup, t, config_.jobs);
    fs::create_directories(layout_.root / "flagged");
    write_flagged(layout_.flagged(benchmark), result.flagged, stamp,
                  {{"benchmark", benchmark}, {"stats", to_json(result.stats)}});
    write_quarantine(layout_.quarantine(benchmark), result.quarantined, stamp);
    log_info("scan.benchmark", to_json(result.stats));
    return result.stats;
}

std::vector<ScanStats> Pipeline::scan_all() {
    std::vector<ScanStats> all;
    json list = json::array();
    for (const auto& r : datasets()) {
        if (r.entry.origin != Origin::benchmark) continue;
        all.push_back(scan(r.entry.dataset));
        list.push_back(to_json(all.back()));
    }
    write_json_file(layout_.scan_stats(), {{"config", config_stamp(config_)}, {"benchmarks", list}});
    return all;
}

AnnotationStore Pipeline::init_store(const fs::path& store_dir, const std::vector<std::string>& annotators,
                                     std::size_t per_pair, std::uint64_t seed) {
    const auto all = datasets();
    std::vector<CandidatePair> flagged;
    json benchmarks = json::object();
    std::set<DocRef> wanted;
    for (const auto& r : all) {
        if (r.entry.origin != Origin::benchmark) continue;
        const auto& ds = r.entry.dataset;
        if (!fs::exists(layout_.flagged(ds))) throw DataError("benchmark '" + ds + "' has not been scanned");
        auto pairs = read_flagged(layout_.flagged(ds));
        std::set<std::string> docs;
        for (auto& p : pairs) {
            docs.insert(p.bench.doc_id);
            wanted.insert(p.bench);
            wanted.insert(p.corpus);
            flagged.push_back(std::move(p));
        }
        json b = {{"n_total", r.stats.n_total()}, {"n_auto", pairs.size()}, {"n_flagged_docs", docs.size()}};
        if (r.entry.published_ratio) b["published_ratio"] = *r.entry.published_ratio;
        benchmarks[ds] = b;
    }

    std::map<DocRef, Document> texts;
    for (const auto& r : all) {
        const auto& ds = r.entry.dataset;
        for_each_document(layout_.docs(ds), r.entry.origin, ds, [&](Document&& d) {
            DocRef ref{ds, d.doc_id};
            if (wanted.count(ref)) texts.emplace(std::move(ref), std::move(d));
        });
    }

    std::vector<StoredPair> pairs;
    pairs.reserve(flagged.size());
    for (auto& p : flagged) {
        const auto& bench = texts.at(p.bench);
        const auto& corpus = texts.at(p.corpus);
        pairs.push_back({std::move(p), bench.text, corpus.text, corpus.repo_path});
    }
    auto store = AnnotationStore::create(store_dir, std::move(pairs),
                                         {{"config", config_stamp(config_)}, {"benchmarks", benchmarks}});
    if (!annotators.empty()) store.assign(annotators, per_pair, seed);
    return store;
}

// ---- orchestration ----------------------------------------------------------------

namespace {

struct Marker {
    json stamp;
    json counts;
};

std::optional<Marker> read_marker(const fs::path& p) {
    if (!fs::exists(p)) return std::nullopt;
    try {
        const auto j = read_json_file(p);
        return Marker{j.at("stamp"), j.value("counts", json::object())};
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace

std::vector<StageReport> run_pipeline(const RunConfig& config, const fs::path& manifest_path,
                                      const PipelineOptions& options) {
    Pipeline p(config);
    const auto& layout = p.layout();
    const auto manifest = load_manifest(manifest_path);
    fs::create_directories(layout.stage_dir());

    json manifest_json = json::array();
    for (const auto& e : manifest) manifest_json.push_back(to_json(e));
    json stamp = config_stamp(config);
    stamp["manifest"] = to_hex(hash_bytes(manifest_json.dump()));

    std::vector<StageReport> reports;
    bool upstream_ran = options.force;
    auto run_stage = [&](const std::string& name, const std::function<json()>& body) {
        StageReport rep{name, false, 0.0, json::object()};
        const auto marker = read_marker(layout.stage_marker(name));
        if (!upstream_ran && marker && marker->stamp == stamp) {
            rep.counts = marker->counts;
            log_info("stage.skipped", {{"stage", name}});
            reports.push_back(rep);
            return;
        }
        // Later stages depend on this one; drop their markers before running.
        bool later = false;
        for (const auto& s : kPipelineStages) {
            if (later) fs::remove(layout.stage_marker(s));
            if (s == name) later = true;
        }
        fs::remove(layout.stage_marker(name));
        log_info("stage.start", {{"stage", name}});
        const auto t0 = std::chrono::steady_clock::now();
        rep.counts = body();
        rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rep.executed = true;
        upstream_ran = true;
        write_json_file(layout.stage_marker(name), {{"stamp", stamp}, {"counts", rep.counts}});
        log_info("stage.done", {{"stage", name}, {"seconds", rep.seconds}});
        reports.push_back(rep);
    };

    run_stage("ingest", [&] {
        json counts = json::object();
        for (const auto& r : p.ingest(manifest)) counts[r.entry.dataset] = to_json(r.stats);
        return counts;
    });
    run_stage("sketch", [&] {
        p.sketch();
        return json{{"datasets", p.datasets().size()}};
    });
    run_stage("index", [&] {
        const auto params = p.build_index();
        return json{{"lsh", to_json(params)}, {"shards", config.shard_count}};
    });
    run_stage("scan", [&] {
        json counts = json::object();
        for (const auto& s : p.scan_all()) counts[s.benchmark] = to_json(s);
        return counts;
    });

    if (!options.annotators.empty()) {
        StageReport rep{"store", false, 0.0, json::object()};
        if (fs::exists(layout.store_dir() / "events.jsonl")) {
            log_warn("store.exists", {{"path", layout.store_dir().string()},
                                      {"note", "existing human labels are never overwritten"}});
        } else {
            const auto t0 = std::chrono::steady_clock::now();
            auto store = p.init_store(layout.store_dir(), options.annotators, options.per_pair, config.seed);
            rep.executed = true;
            rep.counts = to_json(store.progress());
            rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        reports.push_back(rep);
    }

    json stages = json::array();
    for (const auto& r : reports) {
        stages.push_back({{"stage", r.name}, {"executed", r.executed}, {"seconds", r.seconds}, {"counts", r.counts}});
    }
    write_json_file(layout.run_manifest(), {{"finished", utc_timestamp()},
                                            {"config", to_json(config)},
                                            {"stamp", stamp},
                                            {"manifest", manifest_path.string()},
                                            {"stages", stages}});
    return reports;
}

}  // namespace detectleak

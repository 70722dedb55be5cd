// detectleak: command-line front end for the leakage pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "detectleak/annotation.hpp"
#include "detectleak/error.hpp"
#include "detectleak/jsonl.hpp"
#include "detectleak/log.hpp"
#include "detectleak/pipeline.hpp"
#include "detectleak/ppl.hpp"
#include "detectleak/report.hpp"
#include "detectleak/server.hpp"

namespace fs = std::filesystem;
using namespace detectleak;

namespace {

struct GlobalOptions {
    std::string data_dir;
    std::string config_file;
    std::string log_level = "info";
    std::optional<std::size_t> jobs;
    std::optional<std::size_t> shards;
    std::optional<double> threshold;
    std::optional<std::size_t> ngram_n;
    std::optional<std::size_t> num_perm;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> bands;
    std::optional<std::size_t> rows;
    std::string shingle_mode;
    bool lowercase = false;
    bool strip_comments = false;
    bool no_collapse = false;
};

// Defaults, then --config, then DETECTLEAK_DATA_DIR, then explicit flags.
RunConfig resolve_config(const GlobalOptions& g) {
    RunConfig c;
    if (!g.config_file.empty()) c = config_from_json(read_json_file(g.config_file), c);
    if (c.data_dir.empty()) {
        if (const char* env = std::getenv("DETECTLEAK_DATA_DIR"); env && *env) c.data_dir = env;
    }
    if (!g.data_dir.empty()) c.data_dir = g.data_dir;
    if (g.jobs) c.jobs = *g.jobs;
    if (g.shards) c.shard_count = *g.shards;
    if (g.threshold) c.threshold = *g.threshold;
    if (g.ngram_n) c.ngram_n = *g.ngram_n;
    if (g.num_perm) c.num_perm = *g.num_perm;
    if (g.seed) c.seed = *g.seed;
    if (g.bands) c.bands = *g.bands;
    if (g.rows) c.rows = *g.rows;
    if (!g.shingle_mode.empty()) c = config_from_json({{"shingle_mode", g.shingle_mode}}, c);
    if (g.lowercase) c.policy.lowercase = true;
    if (g.strip_comments) c.policy.strip_line_comments = c.policy.strip_block_comments = true;
    if (g.no_collapse) c.policy.collapse_whitespace = false;
    validate(c);
    return c;
}

fs::path require_data_dir(const RunConfig& c) {
    if (c.data_dir.empty()) throw UsageError("no data directory: pass --data-dir or set DETECTLEAK_DATA_DIR");
    return c.data_dir;
}

fs::path store_path(const std::string& flag, const RunConfig& c) {
    if (!flag.empty()) return flag;
    return RunLayout{require_data_dir(c)}.store_dir();
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

LogLevel parse_log_level(const std::string& s) {
    if (s == "debug") return LogLevel::debug;
    if (s == "info") return LogLevel::info;
    if (s == "warn") return LogLevel::warn;
    if (s == "error") return LogLevel::error;
    if (s == "off") return LogLevel::off;
    throw UsageError("unknown log level '" + s + "'");
}

AnnotationServer* g_server = nullptr;

extern "C" void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Detect benchmark leakage in code corpora"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    app.add_option("--data-dir", g.data_dir, "Run directory (falls back to DETECTLEAK_DATA_DIR)");
    app.add_option("--config", g.config_file, "JSON file with RunConfig fields")->check(CLI::ExistingFile);
    app.add_option("--jobs", g.jobs, "Worker threads (0 = all cores)");
    app.add_option("--shards", g.shards, "Band groups held in memory at once during index/scan");
    app.add_option("--threshold", g.threshold, "Jaccard threshold");
    app.add_option("--ngram", g.ngram_n, "Shingle size");
    app.add_option("--num-perm", g.num_perm, "MinHash permutations");
    app.add_option("--seed", g.seed, "Seed for hashing, assignment and sampling");
    app.add_option("--bands", g.bands, "Override the LSH band count (needs --rows)");
    app.add_option("--rows", g.rows, "Override the LSH rows per band (needs --bands)");
    app.add_option("--shingle-mode", g.shingle_mode, "word or character");
    bool char_ngrams = false;
    app.add_flag("--char-ngrams", char_ngrams, "Shorthand for --shingle-mode character");
    app.add_flag("--lowercase", g.lowercase, "Lowercase ASCII before shingling");
    app.add_flag("--strip-comments", g.strip_comments, "Strip //, # and /* */ comments");
    app.add_flag("--no-collapse", g.no_collapse, "Keep whitespace runs as-is");
    app.add_option("--log-level", g.log_level, "debug, info, warn, error or off");

    std::function<void()> action;
    auto config = [&] {
        if (char_ngrams) g.shingle_mode = "character";
        return resolve_config(g);
    };

    // ---- automatic stages ----
    std::string manifest;
    auto* ingest = app.add_subcommand("ingest", "Normalize datasets listed in a manifest");
    ingest->add_option("--manifest", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
    ingest->callback([&] {
        action = [&] {
            Pipeline p(config());
            nlohmann::json out = nlohmann::json::object();
            for (const auto& r : p.ingest(load_manifest(manifest))) out[r.entry.dataset] = to_json(r.stats);
            print_json(out);
        };
    });

    app.add_subcommand("sketch", "Compute MinHash signatures for every dataset")->callback([&] {
        action = [&] { Pipeline(config()).sketch(); };
    });

    app.add_subcommand("index", "Build the LSH index over corpus signatures")->callback([&] {
        action = [&] { print_json(to_json(Pipeline(config()).build_index())); };
    });

    std::string benchmark, index_dir;
    auto* scan = app.add_subcommand("scan", "Query benchmarks against the index and verify candidates");
    scan->add_option("--benchmark", benchmark, "Only this benchmark (default: all)");
    scan->add_option("--index", index_dir, "Index directory (default: <data-dir>/index)");
    scan->callback([&] {
        action = [&] {
            Pipeline p(config());
            if (!index_dir.empty()) p.set_index_dir(index_dir);
            nlohmann::json out = nlohmann::json::array();
            if (benchmark.empty()) {
                for (const auto& s : p.scan_all()) out.push_back(to_json(s));
            } else {
                out.push_back(to_json(p.scan(benchmark)));
            }
            print_json(out);
        };
    });

    std::vector<std::string> annotators;
    std::size_t per_pair = 2;
    bool force = false;
    auto* run = app.add_subcommand("run", "Run ingest, sketch, index and scan with resumable stages");
    run->add_option("--manifest", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
    run->add_option("--annotators", annotators, "Also create the store and assign these annotators")
        ->delimiter(',');
    run->add_option("--per-pair", per_pair, "Annotators per pair");
    run->add_flag("--force", force, "Re-run every stage");
    run->callback([&] {
        action = [&] {
            const auto reports = run_pipeline(config(), manifest, {annotators, per_pair, force});
            nlohmann::json out = nlohmann::json::array();
            for (const auto& r : reports) {
                out.push_back({{"stage", r.name}, {"executed", r.executed}, {"seconds", r.seconds}});
            }
            print_json(out);
        };
    });

    // ---- annotation ----
    std::string store_flag;
    auto* assign = app.add_subcommand("assign", "Create the annotation store from flagged pairs and assign annotators");
    assign->add_option("--store", store_flag, "Store directory (default: <data-dir>/store)");
    assign->add_option("--annotators", annotators, "Annotator ids")->required()->delimiter(',');
    assign->add_option("--per-pair", per_pair, "Annotators per pair");
    assign->callback([&] {
        action = [&] {
            const auto c = config();
            const auto dir = store_path(store_flag, c);
            if (fs::exists(dir / "events.jsonl")) {
                auto store = AnnotationStore::open(dir);
                store.assign(annotators, per_pair, c.seed);
                print_json(to_json(store.progress()));
            } else {
                Pipeline p(c);
                auto store = p.init_store(dir, annotators, per_pair, c.seed);
                print_json(to_json(store.progress()));
            }
        };
    });

    std::string host = "127.0.0.1";
    int port = 8080;
    std::string static_dir;
    auto* serve = app.add_subcommand("serve", "Serve the annotation HTTP API");
    serve->add_option("--store", store_flag, "Store directory (default: <data-dir>/store)");
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks a free one)");
    serve->add_option("--static", static_dir, "Directory of UI assets served at /")->check(CLI::ExistingDirectory);
    serve->callback([&] {
        action = [&] {
            auto store = AnnotationStore::open(store_path(store_flag, config()));
            AnnotationServer server(store, static_dir.empty() ? std::nullopt : std::optional<fs::path>(static_dir));
            const int bound = server.bind(host, port);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cout << nlohmann::json{{"listening", host + ":" + std::to_string(bound)}, {"port", bound}}.dump()
                      << std::endl;
            server.listen();
            g_server = nullptr;
        };
    });

    bool binary = false;
    auto* kappa = app.add_subcommand("kappa", "Cohen's kappa per annotator pair and averaged");
    kappa->add_option("--store", store_flag, "Store directory (default: <data-dir>/store)");
    kappa->add_flag("--binary", binary, "Collapse labels to duplicate / non_duplicate first");
    kappa->callback([&] {
        action = [&] {
            const auto store = AnnotationStore::open(store_path(store_flag, config()));
            const auto k = store.kappa(binary ? KappaClasses::binary : KappaClasses::four_class);
            nlohmann::json per = nlohmann::json::array();
            for (const auto& p : k.per_annotator_pair) {
                per.push_back({{"annotators", {p.first, p.second}}, {"pairs", p.pairs}, {"kappa", p.kappa}});
            }
            print_json({{"classes", binary ? "binary" : "four_class"},
                        {"mean", k.mean ? nlohmann::json(*k.mean) : nlohmann::json(nullptr)},
                        {"per_annotator_pair", per}});
        };
    });

    std::string out_path, markdown_path;
    std::vector<std::string> keywords = kDefaultKeywords;
    auto* report = app.add_subcommand("report", "Leakage ratios, repository aggregation and keyword scan");
    report->add_option("--store", store_flag, "Store directory (default: <data-dir>/store)");
    report->add_option("--out", out_path, "Write the JSON report here (default: stdout)");
    report->add_option("--markdown", markdown_path, "Also write a Markdown table");
    report->add_option("--keywords", keywords, "Repository name keywords")->delimiter(',');
    report->callback([&] {
        action = [&] {
            const auto store = AnnotationStore::open(store_path(store_flag, config()));
            const auto r = build_report(store, keywords);
            for (const auto& w : r.warnings) log_warn("report.warning", {{"message", w}});
            if (out_path.empty()) print_json(to_json(r));
            else write_json_file(out_path, to_json(r));
            if (!markdown_path.empty()) write_text(markdown_path, to_markdown(r));
        };
    });

    std::string input_path, removal_manifest;
    auto* clean = app.add_subcommand("clean", "Write a benchmark file without its leaked samples");
    clean->add_option("--store", store_flag, "Store directory (default: <data-dir>/store)");
    clean->add_option("--benchmark", benchmark, "Benchmark dataset name")->required();
    clean->add_option("--input", input_path, "Original benchmark file (default: its manifest path)")
        ->check(CLI::ExistingFile);
    clean->add_option("--out", out_path, "Cleaned output file")->required();
    clean->add_option("--removed", removal_manifest, "Removal manifest (default: <out>.removed.jsonl)");
    clean->callback([&] {
        action = [&] {
            const auto c = config();
            if (input_path.empty()) {
                const auto rec = Pipeline(c).dataset(benchmark);
                if (!rec) throw UsageError("unknown benchmark '" + benchmark + "'; pass --input");
                input_path = rec->entry.path.string();
            }
            const auto store = AnnotationStore::open(store_path(store_flag, c));
            const auto progress = store.progress();
            if (progress.total_pairs > progress.adjudicated) {
                log_warn("clean.unresolved_pairs", {{"count", progress.total_pairs - progress.adjudicated}});
            }
            const auto leaked = store.leaked();
            std::map<std::string, std::vector<std::string>> ids;
            if (auto it = leaked.find(benchmark); it != leaked.end()) ids = it->second;
            const fs::path manifest_out = removal_manifest.empty() ? fs::path(out_path + ".removed.jsonl")
                                                                   : fs::path(removal_manifest);
            const auto result = emit_clean(input_path, ids, out_path, manifest_out,
                                           store.meta().value("config", nlohmann::json::object()));
            print_json({{"input_records", result.input_records},
                        {"kept", result.kept},
                        {"removed", result.removed.size()},
                        {"manifest", manifest_out.string()}});
        };
    });

    auto* autodetect = app.add_subcommand("autodetect-bench", "Build the balanced leaked / non-leaked sample set");
    autodetect->add_option("--store", store_flag, "Store directory (default: <data-dir>/store)");
    autodetect->add_option("--out", out_path, "Output JSONL")->required();
    autodetect->callback([&] {
        action = [&] {
            const auto c = config();
            const auto store = AnnotationStore::open(store_path(store_flag, c));
            const auto set = build_autodetect(labeled_samples(store), c.seed);
            JsonlWriter w(out_path);
            w.write(make_header("detectleak.autodetect_bench", 1,
                                store.meta().value("config", nlohmann::json::object()),
                                {{"seed", c.seed},
                                 {"per_class", set.per_class},
                                 {"input_samples", set.input_samples},
                                 {"duplicates_removed", set.duplicates_removed}}));
            for (const auto& s : set.samples) {
                w.write({{"id", s.doc_id},
                         {"dataset", s.dataset},
                         {"text", s.text},
                         {"gold", s.leaked ? "leaked" : "non_leaked"}});
            }
            w.close();
            print_json({{"samples", set.samples.size()},
                        {"per_class", set.per_class},
                        {"duplicates_removed", set.duplicates_removed}});
        };
    });

    std::string scores_path, ks_spec, hist_path;
    std::size_t hist_bins = 50;
    double trim_pct = 0.02;
    auto* ppl = app.add_subcommand("ppl-eval", "Top-k accuracy of ascending-perplexity ranking");
    ppl->add_option("--scores", scores_path, "Score file {id, gold, ppl} per line")->required()->check(CLI::ExistingFile);
    ppl->add_option("--ks", ks_spec, "start:stop:step or comma list (default 100..1000 step 100)");
    ppl->add_option("--out", out_path, "Write the accuracy curve here (default: stdout)");
    ppl->add_option("--hist", hist_path, "Write the trimmed per-class histogram here");
    ppl->add_option("--bins", hist_bins, "Histogram bins");
    ppl->add_option("--trim", trim_pct, "Fraction of highest-perplexity records trimmed per class");
    ppl->callback([&] {
        action = [&] {
            ScoreLoadStats stats;
            const auto records = load_scores(scores_path, &stats);
            if (records.empty()) throw DataError("no usable scores in " + scores_path);
            const auto ks = ks_spec.empty() ? default_ks(records.size()) : parse_ks(ks_spec);
            nlohmann::json curve = nlohmann::json::array();
            for (const auto& [k, acc] : accuracy_curve(records, ks)) curve.push_back({{"k", k}, {"accuracy", acc}});
            const nlohmann::json out = {{"records", stats.accepted},
                                        {"rejected_nonfinite", stats.rejected_nonfinite},
                                        {"rejected_malformed", stats.rejected_malformed},
                                        {"curve", curve}};
            if (out_path.empty()) print_json(out);
            else write_json_file(out_path, out);
            if (!hist_path.empty()) {
                write_json_file(hist_path, to_json(distribution_export(trim_outliers(records, trim_pct), hist_bins)));
            }
        };
    });

    auto* export_labels = app.add_subcommand("export-labels", "Write every label and adjudication as JSONL");
    export_labels->add_option("--store", store_flag, "Store directory (default: <data-dir>/store)");
    export_labels->add_option("--out", out_path, "Output JSONL")->required();
    export_labels->callback([&] {
        action = [&] { AnnotationStore::open(store_path(store_flag, config())).export_labels(out_path); };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(ErrorKind::usage);
    }

    try {
        set_log_level(parse_log_level(g.log_level));
        if (action) action();
        return 0;
    } catch (const Error& e) {
        log_event(LogLevel::error, "failed", {{"kind", e.exit_code()}, {"message", e.what()}});
        return e.exit_code();
    } catch (const nlohmann::json::exception& e) {
        log_event(LogLevel::error, "failed", {{"kind", 2}, {"message", e.what()}});
        return static_cast<int>(ErrorKind::data);
    } catch (const std::filesystem::filesystem_error& e) {
        log_event(LogLevel::error, "failed", {{"kind", 2}, {"message", e.what()}});
        return static_cast<int>(ErrorKind::data);
    } catch (const std::exception& e) {
        log_event(LogLevel::error, "failed", {{"kind", 3}, {"message", e.what()}});
        return static_cast<int>(ErrorKind::internal);
    }
}

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detectleak/annotation.hpp"
#include "detectleak/corpus.hpp"
#include "detectleak/lsh.hpp"
#include "detectleak/sketch.hpp"
#include "detectleak/verifier.hpp"

namespace detectleak {

struct RunConfig {
    std::size_t ngram_n = 2;
    ShingleMode shingle_mode = ShingleMode::word;
    double threshold = 0.7;
    std::size_t num_perm = kDefaultPermutations;
    std::uint64_t seed = 1;
    std::size_t shard_count = 1;
    std::size_t jobs = 0;
    std::optional<std::size_t> bands;  // overrides plan_bands when both set
    std::optional<std::size_t> rows;
    std::filesystem::path data_dir;
    NormalizationPolicy policy;
};

/// Throws UsageError on out-of-range values.
void validate(const RunConfig& config);

/// Full resolved config, including data_dir, jobs and shard_count.
nlohmann::json to_json(const RunConfig& config);
/// Overlays the fields present in `j` onto `base`.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});

/// The subset of the config that determines artifact contents. Stamped into
/// every artifact header. data_dir, jobs and shard_count are left out: they
/// change where and how fast outputs are produced, never their bytes.
nlohmann::json config_stamp(const RunConfig& config);

/// Resolves the band plan: explicit bands/rows or plan_bands(num_perm, threshold).
LshParams resolve_lsh_params(const RunConfig& config);

/// Paths inside a run directory.
struct RunLayout {
    std::filesystem::path root;

    std::filesystem::path config_file() const { return root / "config.json"; }
    std::filesystem::path run_manifest() const { return root / "run_manifest.json"; }
    std::filesystem::path datasets_file() const { return root / "datasets.json"; }
    std::filesystem::path stage_dir() const { return root / ".stages"; }
    std::filesystem::path stage_marker(const std::string& stage) const {
        return stage_dir() / (stage + ".done");
    }
    std::filesystem::path docs(const std::string& dataset) const {
        return root / "docs" / (dataset + ".jsonl");
    }
    std::filesystem::path signatures(const std::string& dataset) const {
        return root / "sigs" / (dataset + ".sig.jsonl");
    }
    std::filesystem::path index_dir() const { return root / "index"; }
    std::filesystem::path flagged(const std::string& benchmark) const {
        return root / "flagged" / (benchmark + ".jsonl");
    }
    std::filesystem::path quarantine(const std::string& benchmark) const {
        return root / "flagged" / (benchmark + ".errors.jsonl");
    }
    std::filesystem::path scan_stats() const { return root / "flagged" / "scan_stats.json"; }
    std::filesystem::path store_dir() const { return root / "store"; }
};

struct DatasetRecord {
    DatasetEntry entry;
    IngestStats stats;
};

inline const std::vector<std::string> kPipelineStages = {"ingest", "sketch", "index", "scan"};

/// Stage runner over one run directory. Each stage reads the previous
/// stage's artifacts from disk, so stages can run in separate processes.
class Pipeline {
public:
    explicit Pipeline(RunConfig config);

    const RunConfig& config() const noexcept { return config_; }
    const RunLayout& layout() const noexcept { return layout_; }
    /// Reads and writes the index somewhere other than <data_dir>/index.
    void set_index_dir(std::filesystem::path dir) { index_dir_ = std::move(dir); }
    const std::filesystem::path& index_dir() const noexcept { return index_dir_; }

    /// Normalizes every dataset into docs/ and records datasets.json.
    /// Throws UsageError on duplicate or invalid dataset names.
    std::vector<DatasetRecord> ingest(const std::vector<DatasetEntry>& manifest);
    /// Writes one signature dump per dataset.
    void sketch();
    /// Builds the persisted index over all corpus signatures.
    LshParams build_index();
    /// Scans one benchmark against the persisted index.
    ScanStats scan(const std::string& benchmark, std::optional<double> threshold = std::nullopt);
    std::vector<ScanStats> scan_all();

    /// Creates store/ from every flagged-pairs file and assigns annotators.
    AnnotationStore init_store(const std::filesystem::path& store_dir,
                               const std::vector<std::string>& annotators,
                               std::size_t per_pair, std::uint64_t seed);

    std::vector<DatasetRecord> datasets() const;
    std::optional<DatasetRecord> dataset(const std::string& name) const;

private:
    RunConfig config_;
    RunLayout layout_;
    std::filesystem::path index_dir_;
};

struct StageReport {
    std::string name;
    bool executed = false;
    double seconds = 0.0;
    nlohmann::json counts;
};

struct PipelineOptions {
    std::vector<std::string> annotators;  // non-empty: also create store/
    std::size_t per_pair = 2;
    bool force = false;
};

/// Runs ingest -> sketch -> index -> scan (-> store) with stage markers.
/// A stage whose marker matches the current config stamp is skipped; any
/// re-executed stage invalidates those after it. Writes run_manifest.json.
std::vector<StageReport> run_pipeline(const RunConfig& config,
                                      const std::filesystem::path& manifest_path,
                                      const PipelineOptions& options = {});

}  // namespace detectleak

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "detectleak/error.hpp"
#include "detectleak/verifier.hpp"

namespace detectleak {

enum class Label { not_related, related_not_duplicate, semantically_equivalent, exact_copy };
enum class BinaryLabel { non_duplicate, duplicate };

inline constexpr Label kAllLabels[] = {Label::not_related, Label::related_not_duplicate,
                                       Label::semantically_equivalent, Label::exact_copy};

std::string_view to_string(Label label);
std::string_view to_string(BinaryLabel label);
/// Throws UsageError on an unknown label name.
Label parse_label(std::string_view text);

constexpr BinaryLabel collapse(Label label) noexcept {
    return (label == Label::semantically_equivalent || label == Label::exact_copy)
               ? BinaryLabel::duplicate
               : BinaryLabel::non_duplicate;
}

struct AnnotationRecord {
    std::string pair_id;
    std::string annotator_id;
    Label label = Label::not_related;
    std::string timestamp;

    friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

enum class Resolution { agreement, third_annotator };
std::string_view to_string(Resolution resolution);

struct AdjudicatedPair {
    std::string pair_id;
    Label final_label = Label::not_related;
    Resolution resolved_by = Resolution::agreement;
    std::optional<std::string> adjudicator_id;
};

/// pair_id -> the annotators assigned to it.
using AssignmentPlan = std::map<std::string, std::vector<std::string>>;

/// Assigns each pair to `per_pair` distinct annotators. Slots are dealt
/// round-robin over a seeded shuffle of pairs and annotators, so every
/// annotator's load is within one pair of every other's.
/// Throws UsageError when fewer than `per_pair` annotators are given.
AssignmentPlan assign(std::span<const std::string> pair_ids,
                      std::span<const std::string> annotators, std::size_t per_pair,
                      std::uint64_t seed);

enum class KappaClasses { four_class, binary };

/// Cohen's kappa over paired first-round labels. Returns 1.0 when both raters
/// used a single identical class throughout. Throws UsageError on empty input.
double cohen_kappa(std::span<const std::pair<Label, Label>> labels, KappaClasses classes);

/// Same statistic over arbitrary category indices in [0, num_classes).
double cohen_kappa(std::span<const int> a, std::span<const int> b, int num_classes);

/// Benchmark doc id -> pair ids justifying the leak, per benchmark dataset.
using LeakedSamples = std::map<std::string, std::map<std::string, std::vector<std::string>>>;

struct FinalPairLabel {
    std::string pair_id;
    DocRef bench;
    Label final_label = Label::not_related;
};

/// A benchmark document is leaked iff at least one of its pairs has a
/// duplicate final label. Each document is counted once however many pairs
/// point at it.
LeakedSamples leaked_samples(std::span<const FinalPairLabel> finals);

std::size_t leaked_count(const LeakedSamples& leaked, const std::string& dataset);

/// Why the store refused a mutation.
enum class RejectReason {
    unknown_pair,
    unassigned,
    duplicate,
    not_conflicted,
    identity_violation,
    already_assigned,
};

std::string_view to_string(RejectReason reason);

class Rejected : public UsageError {
public:
    Rejected(RejectReason reason, const std::string& what,
             std::optional<AnnotationRecord> existing = std::nullopt)
        : UsageError(what), reason_(reason), existing_(std::move(existing)) {}

    RejectReason reason() const noexcept { return reason_; }
    /// Set for duplicate submissions.
    const std::optional<AnnotationRecord>& existing() const noexcept { return existing_; }

private:
    RejectReason reason_;
    std::optional<AnnotationRecord> existing_;
};

/// Flagged pair plus what annotators need to judge it.
struct StoredPair {
    CandidatePair pair;
    std::string bench_text;
    std::string corpus_text;
    std::optional<std::string> corpus_repo;
};

nlohmann::json to_json(const StoredPair& pair);
StoredPair stored_pair_from_json(const nlohmann::json& j);

struct PairState {
    PairStatus status = PairStatus::flagged;
    std::vector<std::string> assigned;
    std::vector<AnnotationRecord> labels;  // first round, submission order
    std::optional<AdjudicatedPair> adjudicated;
};

struct KappaSummary {
    struct AnnotatorPair {
        std::string first;
        std::string second;
        std::size_t pairs = 0;
        double kappa = 0.0;
    };
    std::vector<AnnotatorPair> per_annotator_pair;
    /// Unweighted mean over annotator pairs; nullopt when none had overlap.
    std::optional<double> mean;
};

struct Progress {
    std::size_t total_pairs = 0;
    std::size_t assigned = 0;
    std::size_t pending = 0;    // assigned, some labels missing
    std::size_t labeled = 0;    // all labels in, conflict open
    std::size_t adjudicated = 0;
    std::size_t agreed = 0;
    std::size_t third_annotator = 0;
    std::size_t submissions = 0;
    std::size_t adjudications = 0;
    std::size_t duplicates = 0;  // final binary label duplicate
};

nlohmann::json to_json(const Progress& progress);
nlohmann::json to_json(const KappaSummary& summary);

/// Human-verification store backed by an append-only event log.
///
/// Layout of the store directory:
///   meta.json     run metadata (config, per-benchmark totals)
///   pairs.jsonl   flagged pairs with both texts
///   events.jsonl  assign / label / adjudicate events, one per line
///
/// The in-memory snapshot is rebuilt by replaying events on open. All
/// mutations are serialized through one writer lock; reads take a shared lock.
class AnnotationStore {
public:
    static AnnotationStore create(const std::filesystem::path& dir,
                                  std::vector<StoredPair> pairs, nlohmann::json meta);
    static AnnotationStore open(const std::filesystem::path& dir);

    AnnotationStore(AnnotationStore&& other) noexcept;
    AnnotationStore& operator=(AnnotationStore&&) = delete;

    /// Records an assignment plan for every pair. Throws Rejected if any pair
    /// is already assigned.
    AssignmentPlan assign(std::span<const std::string> annotators, std::size_t per_pair,
                          std::uint64_t seed);

    AnnotationRecord submit(const std::string& pair_id, const std::string& annotator_id,
                            Label label);
    AdjudicatedPair adjudicate(const std::string& pair_id, const std::string& adjudicator_id,
                               Label label);

    /// Fully labeled pairs whose first-round labels differ and that lack an
    /// adjudication, in pair_id order.
    std::vector<std::string> conflicts() const;

    /// First assigned pair (pair_id order) this annotator has not labeled yet.
    std::optional<std::string> next_pair(const std::string& annotator_id) const;

    std::optional<StoredPair> pair(const std::string& pair_id) const;
    std::optional<PairState> state(const std::string& pair_id) const;
    std::vector<std::string> pair_ids() const;

    std::vector<AnnotationRecord> records() const;
    std::vector<AdjudicatedPair> adjudicated() const;
    std::vector<FinalPairLabel> final_labels() const;
    LeakedSamples leaked() const;

    KappaSummary kappa(KappaClasses classes) const;
    Progress progress() const;

    /// Every label and adjudication in event order as
    /// {"pair_id", "annotator", "label", "ts", "round"}.
    std::vector<nlohmann::json> export_labels() const;
    void export_labels(const std::filesystem::path& path) const;

    const nlohmann::json& meta() const noexcept { return meta_; }
    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    AnnotationStore(std::filesystem::path dir, nlohmann::json meta);

    void apply(const nlohmann::json& event);
    void append(const nlohmann::json& event);
    PairState& state_for(const std::string& pair_id);

    std::filesystem::path dir_;
    nlohmann::json meta_;
    std::vector<StoredPair> pairs_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, PairState> states_;
    std::vector<nlohmann::json> events_;
    mutable std::shared_mutex mutex_;
};

}  // namespace detectleak

#include "detectleak/annotation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <random>

#include "detectleak/jsonl.hpp"
#include "detectleak/log.hpp"
#include "detectleak/shuffle.hpp"

namespace detectleak {

std::string_view to_string(Label label) {
    switch (label) {
        case Label::not_related: return "not_related";
        case Label::related_not_duplicate: return "related_not_duplicate";
        case Label::semantically_equivalent: return "semantically_equivalent";
        case Label::exact_copy: return "exact_copy";
    }
    return "?";
}

std::string_view to_string(BinaryLabel label) {
    return label == BinaryLabel::duplicate ? "duplicate" : "non_duplicate";
}

Label parse_label(std::string_view text) {
    for (Label l : kAllLabels) {
        if (to_string(l) == text) return l;
    }
    throw UsageError("unknown label '" + std::string(text) + "'");
}

std::string_view to_string(Resolution resolution) {
    return resolution == Resolution::agreement ? "agreement" : "third_annotator";
}

std::string_view to_string(RejectReason reason) {
    switch (reason) {
        case RejectReason::unknown_pair: return "unknown_pair";
        case RejectReason::unassigned: return "unassigned";
        case RejectReason::duplicate: return "duplicate";
        case RejectReason::not_conflicted: return "not_conflicted";
        case RejectReason::identity_violation: return "identity_violation";
        case RejectReason::already_assigned: return "already_assigned";
    }
    return "?";
}

// ---- assignment --------------------------------------------------------------

AssignmentPlan assign(std::span<const std::string> pair_ids,
                      std::span<const std::string> annotators, std::size_t per_pair,
                      std::uint64_t seed) {
    if (per_pair == 0) throw UsageError("per_pair must be >= 1");
    std::vector<std::string> people(annotators.begin(), annotators.end());
    std::sort(people.begin(), people.end());
    if (std::adjacent_find(people.begin(), people.end()) != people.end()) {
        throw UsageError("annotator ids must be distinct");
    }
    if (people.size() < per_pair) {
        throw UsageError("need at least " + std::to_string(per_pair) + " annotators, got " +
                         std::to_string(people.size()));
    }
    std::vector<std::string> pairs(pair_ids.begin(), pair_ids.end());
    std::sort(pairs.begin(), pairs.end());

    std::mt19937_64 rng(seed);
    portable_shuffle(pairs, rng);
    portable_shuffle(people, rng);

    AssignmentPlan plan;
    std::size_t slot = 0;
    for (const auto& pair : pairs) {
        auto& who = plan[pair];
        for (std::size_t j = 0; j < per_pair; ++j) who.push_back(people[(slot + j) % people.size()]);
        slot += per_pair;
    }
    return plan;
}

// ---- agreement ---------------------------------------------------------------

double cohen_kappa(std::span<const int> a, std::span<const int> b, int num_classes) {
    if (a.size() != b.size()) throw UsageError("cohen_kappa: label sequences are not paired");
    if (a.empty()) throw UsageError("cohen_kappa: no labeled pairs");
    if (num_classes < 1) throw UsageError("cohen_kappa: num_classes must be >= 1");
    std::vector<std::int64_t> rows(num_classes, 0), cols(num_classes, 0);
    std::int64_t agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < 0 || a[i] >= num_classes || b[i] < 0 || b[i] >= num_classes) {
            throw UsageError("cohen_kappa: category out of range");
        }
        ++rows[a[i]];
        ++cols[b[i]];
        agree += a[i] == b[i];
    }
    const auto n = static_cast<std::int64_t>(a.size());
    std::int64_t chance = 0;  // p_e * n^2
    for (int k = 0; k < num_classes; ++k) chance += rows[k] * cols[k];
    if (chance == n * n) return 1.0;  // single shared class; observed agreement is then total too
    // (p_o - p_e) / (1 - p_e) with both sides scaled by n^2.
    return static_cast<double>(n * agree - chance) / static_cast<double>(n * n - chance);
}

double cohen_kappa(std::span<const std::pair<Label, Label>> labels, KappaClasses classes) {
    std::vector<int> a, b;
    a.reserve(labels.size());
    b.reserve(labels.size());
    for (const auto& [x, y] : labels) {
        if (classes == KappaClasses::binary) {
            a.push_back(static_cast<int>(collapse(x)));
            b.push_back(static_cast<int>(collapse(y)));
        } else {
            a.push_back(static_cast<int>(x));
            b.push_back(static_cast<int>(y));
        }
    }
    return cohen_kappa(a, b, classes == KappaClasses::binary ? 2 : 4);
}

// ---- leak derivation -----------------------------------------------------------

LeakedSamples leaked_samples(std::span<const FinalPairLabel> finals) {
    LeakedSamples leaked;
    for (const auto& f : finals) {
        if (collapse(f.final_label) != BinaryLabel::duplicate) continue;
        leaked[f.bench.dataset][f.bench.doc_id].push_back(f.pair_id);
    }
    for (auto& [dataset, docs] : leaked) {
        for (auto& [doc, pairs] : docs) std::sort(pairs.begin(), pairs.end());
    }
    return leaked;
}

std::size_t leaked_count(const LeakedSamples& leaked, const std::string& dataset) {
    auto it = leaked.find(dataset);
    return it == leaked.end() ? 0 : it->second.size();
}

// ---- serialization -------------------------------------------------------------

nlohmann::json to_json(const StoredPair& p) {
    auto j = to_json(p.pair);
    j["bench_text"] = p.bench_text;
    j["corpus_text"] = p.corpus_text;
    j["corpus_repo"] = p.corpus_repo ? nlohmann::json(*p.corpus_repo) : nlohmann::json(nullptr);
    return j;
}

StoredPair stored_pair_from_json(const nlohmann::json& j) {
    StoredPair p;
    p.pair = candidate_from_json(j);
    p.bench_text = j.value("bench_text", std::string());
    p.corpus_text = j.value("corpus_text", std::string());
    if (auto r = j.find("corpus_repo"); r != j.end() && r->is_string()) {
        p.corpus_repo = r->get<std::string>();
    }
    return p;
}

nlohmann::json to_json(const Progress& p) {
    return {{"total_pairs", p.total_pairs}, {"assigned", p.assigned},
            {"pending", p.pending},         {"labeled", p.labeled},
            {"adjudicated", p.adjudicated}, {"agreed", p.agreed},
            {"third_annotator", p.third_annotator}, {"submissions", p.submissions},
            {"adjudications", p.adjudications}, {"duplicates", p.duplicates}};
}

nlohmann::json to_json(const KappaSummary& s) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : s.per_annotator_pair) {
        pairs.push_back({{"annotators", {p.first, p.second}}, {"pairs", p.pairs}, {"kappa", p.kappa}});
    }
    return {{"per_annotator_pair", pairs},
            {"mean", s.mean ? nlohmann::json(*s.mean) : nlohmann::json(nullptr)}};
}

// ---- store -----------------------------------------------------------------------

namespace {

constexpr const char* kPairsFormat = "detectleak.store_pairs";
constexpr const char* kEventsFormat = "detectleak.store_events";

bool labels_agree(const PairState& s) {
    return std::all_of(s.labels.begin(), s.labels.end(),
                       [&](const AnnotationRecord& r) { return r.label == s.labels.front().label; });
}

bool fully_labeled(const PairState& s) {
    return !s.assigned.empty() && s.labels.size() == s.assigned.size();
}

bool in_conflict(const PairState& s) {
    return fully_labeled(s) && !labels_agree(s) && !s.adjudicated;
}

bool contains(const std::vector<std::string>& v, const std::string& x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

AnnotationStore::AnnotationStore(std::filesystem::path dir, nlohmann::json meta)
    : dir_(std::move(dir)), meta_(std::move(meta)) {}

AnnotationStore::AnnotationStore(AnnotationStore&& other) noexcept
    : dir_(std::move(other.dir_)),
      meta_(std::move(other.meta_)),
      pairs_(std::move(other.pairs_)),
      index_(std::move(other.index_)),
      states_(std::move(other.states_)),
      events_(std::move(other.events_)) {}

AnnotationStore AnnotationStore::create(const std::filesystem::path& dir,
                                        std::vector<StoredPair> pairs, nlohmann::json meta) {
    if (std::filesystem::exists(dir / "events.jsonl")) {
        throw DataError("annotation store already exists at " + dir.string());
    }
    std::filesystem::create_directories(dir);
    std::sort(pairs.begin(), pairs.end(),
              [](const StoredPair& a, const StoredPair& b) { return a.pair.pair_id < b.pair.pair_id; });
    for (std::size_t i = 1; i < pairs.size(); ++i) {
        if (pairs[i].pair.pair_id == pairs[i - 1].pair.pair_id) {
            throw DataError("duplicate pair id " + pairs[i].pair.pair_id);
        }
    }
    if (!meta.is_object()) meta = nlohmann::json::object();
    meta["created"] = utc_timestamp();
    write_json_file(dir / "meta.json", meta);

    const nlohmann::json config = meta.value("config", nlohmann::json::object());
    JsonlWriter out(dir / "pairs.jsonl");
    out.write(make_header(kPairsFormat, 1, config, {{"count", pairs.size()}}));
    for (const auto& p : pairs) out.write(to_json(p));
    out.close();

    JsonlWriter events(dir / "events.jsonl");
    events.write(make_header(kEventsFormat, 1, config));
    events.close();
    return open(dir);
}

AnnotationStore AnnotationStore::open(const std::filesystem::path& dir) {
    AnnotationStore store(dir, read_json_file(dir / "meta.json"));
    read_artifact(dir / "pairs.jsonl", kPairsFormat, [&](const nlohmann::json& rec) {
        StoredPair p = stored_pair_from_json(rec);
        store.index_[p.pair.pair_id] = store.pairs_.size();
        store.states_[p.pair.pair_id] = PairState{};
        store.pairs_.push_back(std::move(p));
    });
    read_artifact(dir / "events.jsonl", kEventsFormat, [&](const nlohmann::json& ev) {
        store.apply(ev);
        store.events_.push_back(ev);
    });
    return store;
}

PairState& AnnotationStore::state_for(const std::string& pair_id) {
    auto it = states_.find(pair_id);
    if (it == states_.end()) throw DataError("event references unknown pair " + pair_id);
    return it->second;
}

void AnnotationStore::apply(const nlohmann::json& ev) {
    const std::string type = ev.at("type").get<std::string>();
    PairState& s = state_for(ev.at("pair_id").get<std::string>());
    if (type == "assign") {
        s.assigned = ev.at("annotators").get<std::vector<std::string>>();
        s.status = PairStatus::flagged;
    } else if (type == "label") {
        s.labels.push_back(AnnotationRecord{ev.at("pair_id").get<std::string>(),
                                            ev.at("annotator").get<std::string>(),
                                            parse_label(ev.at("label").get<std::string>()),
                                            ev.value("ts", std::string())});
        if (fully_labeled(s)) {
            if (labels_agree(s)) {
                s.adjudicated = AdjudicatedPair{s.labels.front().pair_id, s.labels.front().label,
                                                Resolution::agreement, std::nullopt};
                s.status = PairStatus::adjudicated;
            } else {
                s.status = PairStatus::labeled;
            }
        }
    } else if (type == "adjudicate") {
        s.adjudicated = AdjudicatedPair{ev.at("pair_id").get<std::string>(),
                                        parse_label(ev.at("label").get<std::string>()),
                                        Resolution::third_annotator,
                                        ev.at("adjudicator").get<std::string>()};
        s.status = PairStatus::adjudicated;
    } else {
        throw DataError("unknown store event type '" + type + "'");
    }
}

void AnnotationStore::append(const nlohmann::json& event) {
    const std::string line = event.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
    const auto path = dir_ / "events.jsonl";
    const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
    if (fd < 0) throw DataError("cannot open " + path.string() + ": " + std::strerror(errno));
    // One write() per event: with O_APPEND the line lands whole or not at all.
    const ssize_t written = ::write(fd, line.data(), line.size());
    const bool ok = written == static_cast<ssize_t>(line.size()) && ::fsync(fd) == 0;
    ::close(fd);
    if (!ok) throw DataError("failed to append event to " + path.string());
    apply(event);
    events_.push_back(event);
}

AssignmentPlan AnnotationStore::assign(std::span<const std::string> annotators,
                                       std::size_t per_pair, std::uint64_t seed) {
    std::unique_lock lock(mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, s] : states_) {
        if (!s.assigned.empty()) {
            throw Rejected(RejectReason::already_assigned, "pair " + id + " is already assigned");
        }
        ids.push_back(id);
    }
    AssignmentPlan plan = detectleak::assign(ids, annotators, per_pair, seed);
    for (const auto& [pair_id, who] : plan) {
        append({{"type", "assign"}, {"pair_id", pair_id}, {"annotators", who},
                {"seed", seed}, {"ts", utc_timestamp()}});
    }
    return plan;
}

AnnotationRecord AnnotationStore::submit(const std::string& pair_id,
                                         const std::string& annotator_id, Label label) {
    std::unique_lock lock(mutex_);
    auto it = states_.find(pair_id);
    if (it == states_.end()) {
        throw Rejected(RejectReason::unknown_pair, "unknown pair " + pair_id);
    }
    const PairState& s = it->second;
    if (!contains(s.assigned, annotator_id)) {
        throw Rejected(RejectReason::unassigned,
                       "annotator " + annotator_id + " is not assigned to pair " + pair_id);
    }
    for (const auto& r : s.labels) {
        if (r.annotator_id == annotator_id) {
            throw Rejected(RejectReason::duplicate,
                           "annotator " + annotator_id + " already labeled pair " + pair_id, r);
        }
    }
    AnnotationRecord record{pair_id, annotator_id, label, utc_timestamp()};
    append({{"type", "label"}, {"pair_id", pair_id}, {"annotator", annotator_id},
            {"label", to_string(label)}, {"ts", record.timestamp}});
    return record;
}

AdjudicatedPair AnnotationStore::adjudicate(const std::string& pair_id,
                                            const std::string& adjudicator_id, Label label) {
    std::unique_lock lock(mutex_);
    auto it = states_.find(pair_id);
    if (it == states_.end()) {
        throw Rejected(RejectReason::unknown_pair, "unknown pair " + pair_id);
    }
    const PairState& s = it->second;
    if (!in_conflict(s)) {
        throw Rejected(RejectReason::not_conflicted, "pair " + pair_id + " has no open conflict");
    }
    if (adjudicator_id.empty() || contains(s.assigned, adjudicator_id)) {
        throw Rejected(RejectReason::identity_violation,
                       "adjudicator must differ from the first-round annotators of " + pair_id);
    }
    append({{"type", "adjudicate"}, {"pair_id", pair_id}, {"adjudicator", adjudicator_id},
            {"label", to_string(label)}, {"ts", utc_timestamp()}});
    return *states_.at(pair_id).adjudicated;
}

std::vector<std::string> AnnotationStore::conflicts() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, s] : states_) {
        if (in_conflict(s)) out.push_back(id);
    }
    return out;
}

std::optional<std::string> AnnotationStore::next_pair(const std::string& annotator_id) const {
    std::shared_lock lock(mutex_);
    for (const auto& [id, s] : states_) {
        if (!contains(s.assigned, annotator_id)) continue;
        const bool done = std::any_of(s.labels.begin(), s.labels.end(), [&](const auto& r) {
            return r.annotator_id == annotator_id;
        });
        if (!done) return id;
    }
    return std::nullopt;
}

std::optional<StoredPair> AnnotationStore::pair(const std::string& pair_id) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(pair_id);
    if (it == index_.end()) return std::nullopt;
    return pairs_[it->second];
}

std::optional<PairState> AnnotationStore::state(const std::string& pair_id) const {
    std::shared_lock lock(mutex_);
    auto it = states_.find(pair_id);
    if (it == states_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> AnnotationStore::pair_ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, s] : states_) out.push_back(id);
    return out;
}

std::vector<AnnotationRecord> AnnotationStore::records() const {
    std::shared_lock lock(mutex_);
    std::vector<AnnotationRecord> out;
    for (const auto& ev : events_) {
        if (ev.at("type") != "label") continue;
        out.push_back({ev.at("pair_id").get<std::string>(), ev.at("annotator").get<std::string>(),
                       parse_label(ev.at("label").get<std::string>()), ev.value("ts", std::string())});
    }
    return out;
}

std::vector<AdjudicatedPair> AnnotationStore::adjudicated() const {
    std::shared_lock lock(mutex_);
    std::vector<AdjudicatedPair> out;
    for (const auto& [id, s] : states_) {
        if (s.adjudicated) out.push_back(*s.adjudicated);
    }
    return out;
}

std::vector<FinalPairLabel> AnnotationStore::final_labels() const {
    std::shared_lock lock(mutex_);
    std::vector<FinalPairLabel> out;
    for (const auto& [id, s] : states_) {
        if (!s.adjudicated) continue;
        out.push_back({id, pairs_[index_.at(id)].pair.bench, s.adjudicated->final_label});
    }
    return out;
}

LeakedSamples AnnotationStore::leaked() const {
    const auto finals = final_labels();
    return leaked_samples(finals);
}

KappaSummary AnnotationStore::kappa(KappaClasses classes) const {
    std::shared_lock lock(mutex_);
    std::map<std::pair<std::string, std::string>, std::vector<std::pair<Label, Label>>> by_pair;
    for (const auto& [id, s] : states_) {
        for (std::size_t i = 0; i < s.labels.size(); ++i) {
            for (std::size_t j = i + 1; j < s.labels.size(); ++j) {
                const auto* x = &s.labels[i];
                const auto* y = &s.labels[j];
                if (y->annotator_id < x->annotator_id) std::swap(x, y);
                by_pair[{x->annotator_id, y->annotator_id}].emplace_back(x->label, y->label);
            }
        }
    }
    KappaSummary summary;
    double sum = 0.0;
    for (const auto& [who, labels] : by_pair) {
        const double k = cohen_kappa(labels, classes);
        summary.per_annotator_pair.push_back({who.first, who.second, labels.size(), k});
        sum += k;
    }
    if (!summary.per_annotator_pair.empty()) {
        summary.mean = sum / static_cast<double>(summary.per_annotator_pair.size());
    }
    return summary;
}

Progress AnnotationStore::progress() const {
    std::shared_lock lock(mutex_);
    Progress p;
    p.total_pairs = states_.size();
    for (const auto& [id, s] : states_) {
        if (!s.assigned.empty()) ++p.assigned;
        p.submissions += s.labels.size();
        if (s.adjudicated) {
            ++p.adjudicated;
            if (s.adjudicated->resolved_by == Resolution::agreement) {
                ++p.agreed;
            } else {
                ++p.third_annotator;
                ++p.adjudications;
            }
            if (collapse(s.adjudicated->final_label) == BinaryLabel::duplicate) ++p.duplicates;
        } else if (fully_labeled(s)) {
            ++p.labeled;
        } else if (!s.assigned.empty()) {
            ++p.pending;
        }
    }
    return p;
}

std::vector<nlohmann::json> AnnotationStore::export_labels() const {
    std::shared_lock lock(mutex_);
    std::vector<nlohmann::json> out;
    for (const auto& ev : events_) {
        const auto& type = ev.at("type");
        if (type == "label") {
            out.push_back({{"pair_id", ev.at("pair_id")}, {"annotator", ev.at("annotator")},
                           {"label", ev.at("label")}, {"ts", ev.value("ts", "")},
                           {"round", "first"}});
        } else if (type == "adjudicate") {
            out.push_back({{"pair_id", ev.at("pair_id")}, {"annotator", ev.at("adjudicator")},
                           {"label", ev.at("label")}, {"ts", ev.value("ts", "")},
                           {"round", "adjudication"}});
        }
    }
    return out;
}

void AnnotationStore::export_labels(const std::filesystem::path& path) const {
    const auto records = export_labels();
    JsonlWriter out(path);
    out.write(make_header("detectleak.labels", 1, meta_.value("config", nlohmann::json::object()),
                          {{"count", records.size()}}));
    for (const auto& rec : records) out.write(rec);
    out.close();
}

}  // namespace detectleak

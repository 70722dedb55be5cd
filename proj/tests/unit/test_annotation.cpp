#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "detectleak/annotation.hpp"
#include "support.hpp"

using namespace detectleak;
using testing::TempDir;

namespace {

// n pairs; pair i points at benchmark doc "b<i % bench_docs>".
std::vector<StoredPair> make_pairs(std::size_t n, std::size_t bench_docs = 1000000) {
    std::vector<StoredPair> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto c = make_candidate({"bench", "b" + std::to_string(i % bench_docs)}, {"corpus", "c" + std::to_string(i)});
        c.status = PairStatus::flagged;
        c.exact_jaccard = 0.9;
        out.push_back({c, "bench text " + std::to_string(i), "corpus text " + std::to_string(i),
                       i % 3 ? std::optional<std::string>("owner/repo" + std::to_string(i % 3)) : std::nullopt});
    }
    return out;
}

std::map<std::string, std::size_t> load_of(const AssignmentPlan& plan) {
    std::map<std::string, std::size_t> load;
    for (const auto& [pair, who] : plan) {
        for (const auto& a : who) ++load[a];
    }
    return load;
}

// Kappa straight from the contingency table in floating point.
double oracle_kappa(const std::vector<int>& a, const std::vector<int>& b, int k) {
    std::vector<std::vector<double>> table(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) table[a[i]][b[i]] += 1;
    const double n = static_cast<double>(a.size());
    double po = 0, pe = 0;
    for (int i = 0; i < k; ++i) {
        po += table[i][i] / n;
        double row = 0, col = 0;
        for (int j = 0; j < k; ++j) row += table[i][j], col += table[j][i];
        pe += (row / n) * (col / n);
    }
    if (pe == 1.0) return 1.0;
    return (po - pe) / (1 - pe);
}

}  // namespace

TEST_CASE("binary collapse") {
    CHECK(collapse(Label::not_related) == BinaryLabel::non_duplicate);
    CHECK(collapse(Label::related_not_duplicate) == BinaryLabel::non_duplicate);
    CHECK(collapse(Label::semantically_equivalent) == BinaryLabel::duplicate);
    CHECK(collapse(Label::exact_copy) == BinaryLabel::duplicate);
    for (Label l : kAllLabels) CHECK(parse_label(to_string(l)) == l);
    CHECK_THROWS_AS(parse_label("maybe"), UsageError);
}

TEST_CASE("assign: 4 pairs, 2 annotators gives both annotators every pair") {
    const std::vector<std::string> pairs{"p1", "p2", "p3", "p4"}, who{"ann", "bo"};
    const auto plan = assign(pairs, who, 2, 1);
    CHECK(plan.size() == 4);
    for (const auto& [p, a] : plan) CHECK(std::set<std::string>(a.begin(), a.end()) == std::set<std::string>{"ann", "bo"});
}

TEST_CASE("assign: 100 pairs over 8 annotators is balanced to 25 +- 1") {
    std::vector<std::string> pairs, who;
    for (int i = 0; i < 100; ++i) pairs.push_back("p" + std::to_string(i));
    for (int i = 0; i < 8; ++i) who.push_back("a" + std::to_string(i));
    const auto plan = assign(pairs, who, 2, 42);
    for (const auto& [p, a] : plan) {
        REQUIRE(a.size() == 2);
        CHECK(a[0] != a[1]);
    }
    for (const auto& [a, n] : load_of(plan)) {
        CHECK(n >= 24);
        CHECK(n <= 26);
    }
    CHECK(assign(pairs, who, 2, 42) == plan);
    CHECK(assign(pairs, who, 2, 43) != plan);
}

TEST_CASE("assign: balance holds across many shapes") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t np = 1 + rng() % 60, na = 2 + rng() % 9, per = 1 + rng() % na;
        std::vector<std::string> pairs, who;
        for (std::size_t i = 0; i < np; ++i) pairs.push_back("p" + std::to_string(i));
        for (std::size_t i = 0; i < na; ++i) who.push_back("a" + std::to_string(i));
        const auto plan = assign(pairs, who, per, trial);
        auto load = load_of(plan);
        std::size_t lo = np * per, hi = 0;
        for (const auto& a : who) lo = std::min(lo, load[a]), hi = std::max(hi, load[a]);
        CHECK(hi - lo <= 1);
        for (const auto& [p, a] : plan) CHECK(std::set<std::string>(a.begin(), a.end()).size() == per);
    }
}

TEST_CASE("assign: too few annotators is a usage error") {
    const std::vector<std::string> pairs{"p"}, who{"solo"};
    CHECK_THROWS_AS(assign(pairs, who, 2, 1), UsageError);
}

TEST_CASE("cohen_kappa: hand-checked fixtures") {
    using L = Label;
    const std::vector<std::pair<Label, Label>> half{{L::exact_copy, L::exact_copy},
                                                    {L::exact_copy, L::not_related},
                                                    {L::not_related, L::not_related},
                                                    {L::not_related, L::not_related}};
    CHECK(cohen_kappa(half, KappaClasses::binary) == doctest::Approx(0.5).epsilon(1e-12));
    const std::vector<std::pair<Label, Label>> opposite{{L::exact_copy, L::not_related},
                                                        {L::not_related, L::exact_copy},
                                                        {L::exact_copy, L::not_related},
                                                        {L::not_related, L::exact_copy}};
    CHECK(cohen_kappa(opposite, KappaClasses::binary) == doctest::Approx(-1.0).epsilon(1e-12));
    const std::vector<std::pair<Label, Label>> perfect{{L::exact_copy, L::exact_copy},
                                                       {L::not_related, L::not_related},
                                                       {L::related_not_duplicate, L::related_not_duplicate}};
    CHECK(cohen_kappa(perfect, KappaClasses::four_class) == 1.0);
    const std::vector<std::pair<Label, Label>> one_class(5, {L::exact_copy, L::exact_copy});
    CHECK(cohen_kappa(one_class, KappaClasses::four_class) == 1.0);
    CHECK_THROWS_AS(cohen_kappa(std::vector<std::pair<Label, Label>>{}, KappaClasses::binary), UsageError);
}

TEST_CASE("cohen_kappa matches a contingency-table oracle on 1,000 random label sets") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 60;
        std::vector<std::pair<Label, Label>> labels;
        std::vector<int> a4, b4, a2, b2;
        for (std::size_t i = 0; i < n; ++i) {
            const Label x = kAllLabels[rng() % 4];
            const Label y = rng() % 3 ? x : kAllLabels[rng() % 4];
            labels.emplace_back(x, y);
            a4.push_back(static_cast<int>(x));
            b4.push_back(static_cast<int>(y));
            a2.push_back(collapse(x) == BinaryLabel::duplicate);
            b2.push_back(collapse(y) == BinaryLabel::duplicate);
        }
        REQUIRE(std::abs(cohen_kappa(labels, KappaClasses::four_class) - oracle_kappa(a4, b4, 4)) <= 1e-9);
        REQUIRE(std::abs(cohen_kappa(labels, KappaClasses::binary) - oracle_kappa(a2, b2, 2)) <= 1e-9);
        REQUIRE(std::abs(cohen_kappa(a4, b4, 4) - oracle_kappa(a4, b4, 4)) <= 1e-9);
    }
}

TEST_CASE("leaked_samples: multiplicity, emptiness and set-union oracle") {
    std::vector<FinalPairLabel> three;
    for (int i = 0; i < 3; ++i) three.push_back({"p" + std::to_string(i), {"QuixBugs", "gcd"}, Label::exact_copy});
    const auto one = leaked_samples(three);
    CHECK(leaked_count(one, "QuixBugs") == 1);
    CHECK(one.at("QuixBugs").at("gcd").size() == 3);

    std::vector<FinalPairLabel> none;
    for (int i = 0; i < 4; ++i) none.push_back({"q" + std::to_string(i), {"B", "d" + std::to_string(i)}, Label::related_not_duplicate});
    CHECK(leaked_samples(none).empty());

    std::vector<FinalPairLabel> ten;
    const int docs[10] = {0, 1, 2, 3, 4, 5, 0, 2, 4, 4};
    for (int i = 0; i < 10; ++i) {
        ten.push_back({"r" + std::to_string(i), {"B", "d" + std::to_string(docs[i])},
                       i % 2 ? Label::semantically_equivalent : Label::exact_copy});
    }
    ten.push_back({"r10", {"B", "d9"}, Label::not_related});
    CHECK(leaked_count(leaked_samples(ten), "B") == 6);

    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<FinalPairLabel> finals;
        std::map<std::string, std::set<std::string>> oracle;
        for (int i = 0, n = 1 + rng() % 40; i < n; ++i) {
            const DocRef ref{"ds" + std::to_string(rng() % 3), "d" + std::to_string(rng() % 15)};
            const Label l = kAllLabels[rng() % 4];
            finals.push_back({"x" + std::to_string(i), ref, l});
            if (collapse(l) == BinaryLabel::duplicate) oracle[ref.dataset].insert(ref.doc_id);
        }
        const auto got = leaked_samples(finals);
        std::map<std::string, std::set<std::string>> flat;
        for (const auto& [ds, m] : got) {
            for (const auto& [id, pairs] : m) flat[ds].insert(id);
        }
        CHECK(flat == oracle);
        // Monotone: one more duplicate pair never removes a leaked doc.
        finals.push_back({"extra", {"ds0", "new"}, Label::exact_copy});
        const auto more = leaked_samples(finals);
        for (const auto& [ds, ids] : oracle) {
            for (const auto& id : ids) CHECK(more.at(ds).count(id) == 1);
        }
    }
}

TEST_CASE("store: submission lifecycle and agreement") {
    TempDir dir;
    auto store = AnnotationStore::create(dir / "s", make_pairs(4), {{"config", {{"seed", 1}}}});
    const std::vector<std::string> who{"ann", "bo"};
    store.assign(who, 2, 5);
    const auto ids = store.pair_ids();

    const auto rec = store.submit(ids[0], "ann", Label::exact_copy);
    CHECK(rec.annotator_id == "ann");
    CHECK(!rec.timestamp.empty());
    CHECK(store.state(ids[0])->status == PairStatus::flagged);
    CHECK(store.conflicts().empty());

    store.submit(ids[0], "bo", Label::exact_copy);
    const auto st = *store.state(ids[0]);
    CHECK(st.status == PairStatus::adjudicated);
    REQUIRE(st.adjudicated);
    CHECK(st.adjudicated->resolved_by == Resolution::agreement);
    CHECK(st.adjudicated->final_label == Label::exact_copy);
    CHECK_FALSE(st.adjudicated->adjudicator_id);

    try {
        store.submit(ids[0], "ann", Label::not_related);
        FAIL("resubmission accepted");
    } catch (const Rejected& e) {
        CHECK(e.reason() == RejectReason::duplicate);
        REQUIRE(e.existing());
        CHECK(e.existing()->label == Label::exact_copy);
    }
    try {
        store.submit(ids[1], "mallory", Label::not_related);
        FAIL("unassigned accepted");
    } catch (const Rejected& e) {
        CHECK(e.reason() == RejectReason::unassigned);
    }
    try {
        store.submit("nope", "ann", Label::not_related);
        FAIL("unknown pair accepted");
    } catch (const Rejected& e) {
        CHECK(e.reason() == RejectReason::unknown_pair);
    }
    CHECK_THROWS_AS(store.assign(who, 2, 5), Rejected);
}

TEST_CASE("store: 50 pairs with 7 planted disagreements") {
    TempDir dir;
    auto store = AnnotationStore::create(dir / "s", make_pairs(50), {});
    const std::vector<std::string> who{"ann", "bo"};
    store.assign(who, 2, 1);
    const auto ids = store.pair_ids();
    std::set<std::string> planted;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        store.submit(ids[i], "ann", Label::exact_copy);
        if (i % 7 == 3) {
            planted.insert(ids[i]);
            store.submit(ids[i], "bo", i % 2 ? Label::semantically_equivalent : Label::related_not_duplicate);
        } else {
            store.submit(ids[i], "bo", Label::exact_copy);
        }
    }
    REQUIRE(planted.size() == 7);
    const auto conflicts = store.conflicts();
    CHECK(std::set<std::string>(conflicts.begin(), conflicts.end()) == planted);
    CHECK(store.progress().labeled == 7);
}

TEST_CASE("store: adjudication rules") {
    TempDir dir;
    auto store = AnnotationStore::create(dir / "s", make_pairs(2), {});
    const std::vector<std::string> who{"ann", "bo"};
    store.assign(who, 2, 1);
    const auto ids = store.pair_ids();
    store.submit(ids[0], "ann", Label::semantically_equivalent);
    store.submit(ids[0], "bo", Label::related_not_duplicate);
    store.submit(ids[1], "ann", Label::not_related);
    store.submit(ids[1], "bo", Label::not_related);

    try {
        store.adjudicate(ids[0], "ann", Label::exact_copy);
        FAIL("first annotator adjudicated");
    } catch (const Rejected& e) {
        CHECK(e.reason() == RejectReason::identity_violation);
    }
    try {
        store.adjudicate(ids[1], "cy", Label::exact_copy);
        FAIL("agreed pair adjudicated");
    } catch (const Rejected& e) {
        CHECK(e.reason() == RejectReason::not_conflicted);
    }
    const auto adj = store.adjudicate(ids[0], "cy", Label::semantically_equivalent);
    CHECK(adj.resolved_by == Resolution::third_annotator);
    CHECK(adj.adjudicator_id == "cy");
    CHECK(collapse(adj.final_label) == BinaryLabel::duplicate);
    CHECK(store.conflicts().empty());
    CHECK_THROWS_AS(store.adjudicate(ids[0], "dee", Label::exact_copy), Rejected);

    // Every pair reaches exactly one terminal state.
    const auto finals = store.final_labels();
    CHECK(finals.size() == 2);
    std::set<std::string> seen;
    for (const auto& f : finals) CHECK(seen.insert(f.pair_id).second);
    CHECK(store.adjudicated().size() == 2);
}

TEST_CASE("store: replaying the event log reproduces the snapshot") {
    TempDir dir;
    {
        auto store = AnnotationStore::create(dir / "s", make_pairs(10, 4), {{"config", {{"seed", 3}}}});
        const std::vector<std::string> who{"ann", "bo", "cy"};
        store.assign(who, 2, 9);
        for (const auto& id : store.pair_ids()) {
            const auto st = *store.state(id);
            store.submit(id, st.assigned[0], Label::exact_copy);
            store.submit(id, st.assigned[1], id < "8" ? Label::exact_copy : Label::not_related);
        }
    }
    auto reopened = AnnotationStore::open(dir / "s");
    const auto p = reopened.progress();
    CHECK(p.total_pairs == 10);
    CHECK(p.submissions == 20);
    CHECK(p.adjudicated + p.labeled == 10);
    CHECK(reopened.records().size() == 20);
    CHECK(reopened.meta()["config"]["seed"] == 3);
    CHECK(reopened.pair(reopened.pair_ids()[0])->bench_text.rfind("bench text", 0) == 0);
}

TEST_CASE("store: concurrent submissions are serialized and all persisted") {
    TempDir dir;
    std::vector<std::string> who;
    for (int i = 0; i < 8; ++i) who.push_back("a" + std::to_string(i));
    {
        auto store = AnnotationStore::create(dir / "s", make_pairs(200), {});
        const auto plan = store.assign(who, 2, 11);
        std::vector<std::jthread> threads;
        for (const auto& a : who) {
            threads.emplace_back([&, a] {
                for (const auto& [pair, assigned] : plan) {
                    if (std::find(assigned.begin(), assigned.end(), a) != assigned.end()) {
                        store.submit(pair, a, Label::exact_copy);
                        (void)store.progress();
                    }
                }
            });
        }
    }
    const auto store = AnnotationStore::open(dir / "s");
    CHECK(store.records().size() == 400);
    CHECK(store.progress().agreed == 200);
    CHECK(leaked_count(store.leaked(), "bench") == 200);
}

TEST_CASE("store: kappa per annotator pair and next_pair queue") {
    TempDir dir;
    auto store = AnnotationStore::create(dir / "s", make_pairs(4), {});
    const std::vector<std::string> who{"ann", "bo"};
    store.assign(who, 2, 1);
    const auto ids = store.pair_ids();
    CHECK(store.next_pair("ann") == ids[0]);
    CHECK_FALSE(store.next_pair("zed"));
    const Label a[4] = {Label::exact_copy, Label::exact_copy, Label::not_related, Label::not_related};
    const Label b[4] = {Label::exact_copy, Label::not_related, Label::not_related, Label::not_related};
    for (int i = 0; i < 4; ++i) {
        store.submit(ids[i], "ann", a[i]);
        store.submit(ids[i], "bo", b[i]);
    }
    CHECK_FALSE(store.next_pair("ann"));
    const auto k = store.kappa(KappaClasses::binary);
    REQUIRE(k.per_annotator_pair.size() == 1);
    CHECK(k.per_annotator_pair[0].pairs == 4);
    CHECK(*k.mean == doctest::Approx(0.5));
}

TEST_CASE("store: label export covers submissions and adjudications") {
    TempDir dir;
    auto store = AnnotationStore::create(dir / "s", make_pairs(1), {});
    const std::vector<std::string> who{"ann", "bo"};
    store.assign(who, 2, 1);
    const auto id = store.pair_ids()[0];
    store.submit(id, "ann", Label::exact_copy);
    store.submit(id, "bo", Label::not_related);
    store.adjudicate(id, "cy", Label::exact_copy);
    store.export_labels(dir / "labels.jsonl");
    const auto rows = testing::read_jsonl(dir / "labels.jsonl");
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].contains("header"));
    for (int i = 1; i < 4; ++i) {
        for (const char* f : {"pair_id", "annotator", "label", "ts"}) CHECK(rows[i].contains(f));
    }
    CHECK(rows[3]["annotator"] == "cy");
    CHECK(rows[3]["round"] == "adjudication");
}

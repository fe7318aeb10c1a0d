#include <algorithm>
#include <set>
#include <string>

#include "doctest.h"
#include "pidskit/rng.hpp"
#include "pidskit/triage.hpp"
#include "support/testkit.hpp"

using namespace pidskit;

TEST_CASE("zero detections give an empty ranking") {
    ScoreReport r;
    r.scores = {{"a", 0.1}, {"b", 0.2}};
    r.threshold = 1.0;
    CHECK(triage_by_score(r).ranked.empty());
}

TEST_CASE("three detections in descending score order") {
    ScoreReport r;
    r.scores = {{"a", 0.9}, {"b", 0.2}, {"c", 0.7}, {"d", 0.8}};
    r.threshold = 0.5;
    const auto t = triage_by_score(r);
    REQUIRE(t.ranked.size() == 3);
    CHECK(t.ranked[0].first == "a");
    CHECK(t.ranked[1].first == "d");
    CHECK(t.ranked[2].first == "c");
}

TEST_CASE("triage output is a permutation of the detection set") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        ScoreReport r;
        const auto n = 1 + rng.below(60);
        for (std::size_t i = 0; i < n; ++i) r.scores["n" + std::to_string(i)] = static_cast<double>(rng.below(10));
        r.threshold = static_cast<double>(rng.below(10));
        std::multiset<std::string> detected;
        for (const auto& [id, v] : r.scores)
            if (v > r.threshold) detected.insert(id);
        const auto t = triage_by_score(r);
        std::multiset<std::string> got;
        for (const auto& [id, v] : t.ranked) got.insert(id);
        CHECK(got == detected);
        for (std::size_t i = 1; i < t.ranked.size(); ++i) {
            CHECK(t.ranked[i - 1].second >= t.ranked[i].second);
            if (t.ranked[i - 1].second == t.ranked[i].second) CHECK(t.ranked[i - 1].first < t.ranked[i].first);
        }
    }
}

TEST_CASE("triage file") {
    testkit::TempDir d;
    TriageResult t;
    t.ranked = {{"a", 0.5}, {"b", 0.25}};
    write_triage(t, d / "triage.csv");
    CHECK(testkit::read_file(d / "triage.csv") == "rank,node_id,score\n1,a,0.5\n2,b,0.25\n");
}

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "pidskit/errors.hpp"
#include "pidskit/rng.hpp"
#include "pidskit/transform.hpp"
#include "support/oracles.hpp"
#include "support/testkit.hpp"

using namespace pidskit;
using testkit::kT0;

namespace {

ProvGraph graph_of(std::size_t n, const std::vector<std::tuple<std::uint32_t, std::uint32_t, Op, std::int64_t>>& edges) {
    ProvGraph g;
    g.window_start = kT0;
    g.window_end = kT0 + testkit::kMinute * 15;
    for (std::size_t i = 0; i < n; ++i) {
        std::string id(32, '0');
        id.back() = static_cast<char>('a' + i);
        g.upsert_node(Node{id, 0, EntityKind::File, {{"type", "file"}}});
    }
    std::uint64_t eid = 1;
    for (const auto& [s, d, op, ts] : edges) g.add_edge(Edge{s, d, op, kT0 + ts, eid++, EdgeFlag::None});
    return g;
}

std::set<std::pair<std::uint32_t, std::uint32_t>> pseudo_pairs(const ProvGraph& g) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> out;
    for (const auto& e : g.edges())
        if (e.flag == EdgeFlag::PseudoRoot) out.emplace(e.src, e.dst);
    return out;
}

std::map<std::string, EntityKind> kinds_by_base(const ProvGraph& g) {
    std::map<std::string, EntityKind> out;
    for (const auto& n : g.nodes()) out[std::string(base_id(n.id))] = n.kind;
    return out;
}

}  // namespace

TEST_CASE("undirected adds one reverse arc per edge") {
    const auto one = to_undirected(graph_of(2, {{0, 1, Op::Read, 1}}));
    CHECK(one.edge_count() == 2);
    CHECK_FALSE(one.directed);
    const auto pair = to_undirected(graph_of(2, {{0, 1, Op::Read, 1}, {1, 0, Op::Read, 1}}));
    CHECK(pair.edge_count() == 2);
}

TEST_CASE("undirected is idempotent on random graphs") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        const auto g = testkit::random_graph(rng, 12, 40);
        const auto u = to_undirected(g);
        CHECK(to_undirected(u).edges() == u.edges());
        CHECK(u.edge_count() <= 2 * g.edge_count());
        CHECK(u.nodes() == g.nodes());
    }
}

TEST_CASE("redundant edges collapse to the earliest occurrence") {
    std::vector<std::tuple<std::uint32_t, std::uint32_t, Op, std::int64_t>> edges;
    for (int i = 0; i < 100; ++i) edges.emplace_back(0, 1, Op::Read, i);
    const auto [g, removed] = remove_redundant(graph_of(2, edges));
    CHECK(g.edge_count() == 1);
    CHECK(removed == 99);
    CHECK(g.edges()[0].ts == kT0);
    const auto [rw, none] = remove_redundant(graph_of(2, {{0, 1, Op::Read, 1}, {0, 1, Op::Write, 2}}));
    CHECK(rw.edge_count() == 2);
    CHECK(none == 0);
}

TEST_CASE("redundant-edge removal matches the first-occurrence oracle") {
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        Rng rng(seed);
        const auto g = testkit::random_graph(rng, 6, 80);
        const auto [out, removed] = remove_redundant(g);
        std::vector<std::tuple<std::uint32_t, std::uint32_t, int, std::int64_t, std::uint64_t>> got;
        for (const auto& e : out.edges()) got.emplace_back(e.src, e.dst, static_cast<int>(e.op), e.ts, e.event_id);
        std::sort(got.begin(), got.end());
        CHECK(got == oracle::first_occurrences(g));
        CHECK(removed == g.edge_count() - out.edge_count());
    }
}

TEST_CASE("dag conversion breaks a two-cycle") {
    const auto g = graph_of(2, {{0, 1, Op::Write, 1}, {1, 0, Op::Read, 2}});
    CHECK(oracle::has_cycle(graph_of(2, {{0, 1, Op::Write, 1}, {1, 0, Op::Read, 2}, {0, 1, Op::Write, 3}})));
    const auto d = to_dag(graph_of(2, {{0, 1, Op::Write, 1}, {1, 0, Op::Read, 2}, {0, 1, Op::Write, 3}}));
    CHECK_FALSE(oracle::has_cycle(d));
    CHECK(d.node_count() > 2);
    CHECK(to_dag(g).edge_count() == 2);
}

TEST_CASE("dag conversion leaves an acyclic chain alone") {
    const auto g = graph_of(3, {{0, 1, Op::Write, 1}, {1, 2, Op::Write, 2}});
    const auto d = to_dag(g);
    CHECK(d.node_count() == 3);
    CHECK(d.edges() == g.edges());
}

TEST_CASE("dag conversion is acyclic and preserves base edges on random graphs") {
    for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
        Rng rng(seed);
        const auto g = testkit::random_graph(rng, 2 + rng.below(15), 1 + rng.below(60));
        const auto d = to_dag(g);
        CHECK_FALSE(oracle::has_cycle(d));
        CHECK(is_acyclic(d));
        CHECK(oracle::base_multiset(d) == oracle::base_multiset(g));
        CHECK(kinds_by_base(d) == kinds_by_base(g));
    }
}

TEST_CASE("pseudo-root edges for a chain") {
    const auto g = graph_of(3, {{0, 1, Op::Write, 1}, {1, 2, Op::Write, 2}});
    const auto p = pseudo_root_edges(g);
    CHECK(pseudo_pairs(p) == std::set<std::pair<std::uint32_t, std::uint32_t>>{{0, 1}, {0, 2}});
    for (const auto& e : p.edges())
        if (e.flag == EdgeFlag::PseudoRoot) CHECK(e.ts == g.window_start);
}

TEST_CASE("pseudo-root edges for two roots and isolated nodes") {
    const auto two = pseudo_root_edges(graph_of(4, {{0, 2, Op::Read, 1}, {1, 2, Op::Read, 2}}));
    CHECK(pseudo_pairs(two) == std::set<std::pair<std::uint32_t, std::uint32_t>>{{0, 2}, {1, 2}});
    CHECK(pseudo_pairs(pseudo_root_edges(graph_of(1, {}))).empty());
    CHECK_THROWS_AS(pseudo_root_edges(graph_of(2, {{0, 1, Op::Read, 1}, {1, 0, Op::Read, 2}})), std::invalid_argument);
}

TEST_CASE("pseudo-root ancestors match a reachability oracle") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        const auto g = to_dag(testkit::random_graph(rng, 8, 20));
        const auto p = pseudo_root_edges(g);
        const std::size_t n = g.node_count();
        std::vector<bool> has_pred(n, false);
        for (const auto& e : g.edges()) has_pred[e.dst] = true;
        std::set<std::pair<std::uint32_t, std::uint32_t>> expect;
        for (std::uint32_t r = 0; r < n; ++r) {
            if (has_pred[r]) continue;
            std::vector<bool> seen(n, false);
            std::vector<std::uint32_t> stack = {r};
            while (!stack.empty()) {
                const auto v = stack.back();
                stack.pop_back();
                for (const auto& e : g.edges())
                    if (e.src == v && !seen[e.dst]) seen[e.dst] = true, stack.push_back(e.dst);
            }
            for (std::uint32_t v = 0; v < n; ++v)
                if (seen[v] && v != r) expect.emplace(r, v);
        }
        CHECK(pseudo_pairs(p) == expect);
    }
}

TEST_CASE("transform pipelines apply in order and validate") {
    Rng rng(4);
    const auto g = testkit::random_graph(rng, 10, 40);
    const auto a = apply_transforms(g, {"dag", "pseudo_root"});
    CHECK(a == pseudo_root_edges(to_dag(g)));
    CHECK(apply_transforms(g, {"none"}) == g);
    const auto cyclic = graph_of(2, {{0, 1, Op::Read, 1}, {1, 0, Op::Read, 2}});
    CHECK_THROWS_AS(apply_transforms(cyclic, {"pseudo_root"}), ConfigError);
    CHECK_THROWS_AS(apply_transforms(g, {"shuffle"}), ConfigError);
    for (const auto& m : {"undirected", "remove_redundant", "dag"}) CHECK(kinds_by_base(apply_transforms(g, {m})) == kinds_by_base(g));
}

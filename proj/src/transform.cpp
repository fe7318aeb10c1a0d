#include "pidskit/transform.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "pidskit/errors.hpp"

namespace pidskit {

namespace {

struct ArcKey {
    std::uint32_t src, dst;
    Op op;
    std::int64_t ts;
    bool operator==(const ArcKey&) const = default;
};

struct ArcKeyHash {
    std::size_t operator()(const ArcKey& k) const {
        std::size_t h = std::hash<std::int64_t>{}(k.ts);
        h ^= (static_cast<std::size_t>(k.src) * 0x9E3779B97F4A7C15ull) + (h << 6) + (h >> 2);
        h ^= (static_cast<std::size_t>(k.dst) * 0xC2B2AE3D27D4EB4Full) + (h << 6) + (h >> 2);
        h ^= static_cast<std::size_t>(k.op) + (h << 6) + (h >> 2);
        return h;
    }
};

ProvGraph with_same_nodes(const ProvGraph& g) {
    ProvGraph out;
    out.window_start = g.window_start;
    out.window_end = g.window_end;
    out.directed = g.directed;
    for (const auto& n : g.nodes()) out.upsert_node(n);
    return out;
}

// Kahn's algorithm over all edges.
std::vector<std::uint32_t> topo_order(const ProvGraph& g, bool& acyclic) {
    const auto n = g.node_count();
    std::vector<std::uint32_t> indeg(n, 0);
    std::vector<std::vector<std::uint32_t>> out(n);
    for (const auto& e : g.edges()) {
        ++indeg[e.dst];
        out[e.src].push_back(e.dst);
    }
    std::vector<std::uint32_t> order;
    order.reserve(n);
    for (std::uint32_t v = 0; v < n; ++v)
        if (indeg[v] == 0) order.push_back(v);
    for (std::size_t i = 0; i < order.size(); ++i)
        for (auto w : out[order[i]])
            if (--indeg[w] == 0) order.push_back(w);
    acyclic = order.size() == n;
    return order;
}

}  // namespace

ProvGraph to_undirected(const ProvGraph& g) {
    ProvGraph out = with_same_nodes(g);
    std::unordered_set<ArcKey, ArcKeyHash> present;
    present.reserve(g.edge_count() * 2);
    for (const auto& e : g.edges()) present.insert({e.src, e.dst, e.op, e.ts});

    std::vector<Edge> edges = g.edges();
    for (const auto& e : g.edges()) {
        const ArcKey rev{e.dst, e.src, e.op, e.ts};
        if (present.count(rev)) continue;
        present.insert(rev);
        Edge r = e;
        std::swap(r.src, r.dst);
        edges.push_back(r);
    }
    out.set_edges(std::move(edges));
    out.sort_edges();
    out.directed = false;
    return out;
}

std::pair<ProvGraph, std::size_t> remove_redundant(const ProvGraph& g) {
    ProvGraph out = with_same_nodes(g);
    std::set<std::tuple<std::uint32_t, std::uint32_t, Op>> seen;
    std::vector<Edge> kept;
    kept.reserve(g.edge_count());
    for (const auto& e : g.edges())
        if (seen.emplace(e.src, e.dst, e.op).second) kept.push_back(e);
    const std::size_t removed = g.edge_count() - kept.size();
    out.set_edges(std::move(kept));
    return {std::move(out), removed};
}

ProvGraph to_dag(const ProvGraph& g) {
    ProvGraph out = with_same_nodes(g);
    const auto n = g.node_count();
    std::vector<std::uint32_t> version(n, 0);
    std::vector<std::uint32_t> row(n);  // row of the current version in `out`
    std::vector<bool> emitted(n, false);
    for (std::uint32_t v = 0; v < n; ++v) row[v] = v;

    ProvGraph sorted = g;
    sorted.sort_edges();
    std::vector<Edge> edges;
    edges.reserve(g.edge_count());
    for (Edge e : sorted.edges()) {
        const std::uint32_t u = e.src;
        const std::uint32_t v = e.dst;
        e.src = row[u];
        emitted[u] = true;
        if (emitted[v]) {
            ++version[v];
            emitted[v] = false;
            Node copy = g.nodes()[v];
            copy.id = std::string(base_id(copy.id)) + "#" + std::to_string(version[v]);
            row[v] = out.upsert_node(copy);
        }
        e.dst = row[v];
        edges.push_back(e);
    }
    out.set_edges(std::move(edges));
    return out;
}

bool is_acyclic(const ProvGraph& g) {
    bool acyclic = false;
    topo_order(g, acyclic);
    return acyclic;
}

ProvGraph pseudo_root_edges(const ProvGraph& g) {
    bool acyclic = false;
    const auto order = topo_order(g, acyclic);
    if (!acyclic) throw std::invalid_argument("pseudo_root_edges requires an acyclic graph");

    const auto n = g.node_count();
    std::vector<std::vector<std::uint32_t>> preds(n);
    for (const auto& e : g.edges()) preds[e.dst].push_back(e.src);

    std::vector<std::set<std::uint32_t>> roots(n);
    for (auto v : order) {
        if (preds[v].empty()) {
            roots[v].insert(v);
            continue;
        }
        for (auto p : preds[v]) roots[v].insert(roots[p].begin(), roots[p].end());
    }

    ProvGraph out = g;
    for (std::uint32_t v = 0; v < n; ++v) {
        if (preds[v].empty()) continue;
        for (auto r : roots[v])
            out.add_edge(Edge{r, v, Op::PseudoRoot, g.window_start, 0, EdgeFlag::PseudoRoot});
    }
    out.sort_edges();
    return out;
}

ProvGraph apply_transforms(const ProvGraph& g, const std::vector<std::string>& methods) {
    ProvGraph cur = g;
    for (const auto& m : methods) {
        if (m == "none") continue;
        if (m == "undirected") cur = to_undirected(cur);
        else if (m == "remove_redundant") cur = remove_redundant(cur).first;
        else if (m == "dag") cur = to_dag(cur);
        else if (m == "pseudo_root") {
            if (!is_acyclic(cur))
                throw ConfigError("transformation pseudo_root needs an acyclic graph; list 'dag' before it");
            cur = pseudo_root_edges(cur);
        } else {
            throw ConfigError("unknown transformation: " + m);
        }
    }
    return cur;
}

}  // namespace pidskit

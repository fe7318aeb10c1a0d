#include "pidskit/graph.hpp"

#include <algorithm>

#include "pidskit/errors.hpp"
#include "pidskit/io.hpp"

namespace pidskit {

namespace {

constexpr std::string_view kOpNames[] = {"read",   "write",  "execute", "fork",
                                         "open",   "close",  "unlink",  "connect",
                                         "send",   "recv",   "mmap",    "clone",
                                         "pseudo_root"};

std::string index_key(std::string_view id, std::uint32_t window) {
    std::string k(id);
    k += '\x1f';
    k += std::to_string(window);
    return k;
}

}  // namespace

std::string_view kind_name(EntityKind k) {
    switch (k) {
        case EntityKind::Subject: return "subject";
        case EntityKind::File: return "file";
        case EntityKind::Netflow: return "netflow";
    }
    return "?";
}

std::optional<EntityKind> parse_kind(std::string_view s) {
    if (s == "subject") return EntityKind::Subject;
    if (s == "file") return EntityKind::File;
    if (s == "netflow") return EntityKind::Netflow;
    return std::nullopt;
}

std::string_view op_name(Op op) { return kOpNames[static_cast<int>(op)]; }

std::optional<Op> parse_op(std::string_view s) {
    // pseudo_root is internal and never accepted from input.
    for (int i = 0; i < kNumOps; ++i)
        if (kOpNames[i] == s) return static_cast<Op>(i);
    return std::nullopt;
}

std::string_view base_id(std::string_view node_id) {
    const auto hash = node_id.find('#');
    return hash == std::string_view::npos ? node_id : node_id.substr(0, hash);
}

std::uint32_t ProvGraph::upsert_node(const Node& n) {
    const std::string key = index_key(n.id, n.window);
    auto it = index_.find(key);
    if (it != index_.end()) {
        Node& existing = nodes_[it->second];
        for (const auto& [k, v] : n.attrs) existing.attrs[k] = v;
        return it->second;
    }
    const auto idx = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(n);
    index_.emplace(key, idx);
    return idx;
}

std::optional<std::uint32_t> ProvGraph::find_node(std::string_view id, std::uint32_t window) const {
    auto it = index_.find(index_key(id, window));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void ProvGraph::sort_edges() {
    std::stable_sort(edges_.begin(), edges_.end(), [](const Edge& a, const Edge& b) {
        if (a.ts != b.ts) return a.ts < b.ts;
        return a.event_id < b.event_id;
    });
}

void ProvGraph::write(BinaryWriter& w) const {
    w.magic("PGRF");
    w.i64(window_start);
    w.i64(window_end);
    w.u8(directed ? 1 : 0);
    w.u64(nodes_.size());
    for (const auto& n : nodes_) {
        w.str(n.id);
        w.u32(n.window);
        w.u8(static_cast<std::uint8_t>(n.kind));
        w.u32(static_cast<std::uint32_t>(n.attrs.size()));
        for (const auto& [k, v] : n.attrs) {
            w.str(k);
            w.str(v);
        }
    }
    w.u64(edges_.size());
    for (const auto& e : edges_) {
        w.u32(e.src);
        w.u32(e.dst);
        w.u8(static_cast<std::uint8_t>(e.op));
        w.i64(e.ts);
        w.u64(e.event_id);
        w.u8(static_cast<std::uint8_t>(e.flag));
    }
}

ProvGraph ProvGraph::read(BinaryReader& r) {
    r.expect_magic("PGRF");
    ProvGraph g;
    g.window_start = r.i64();
    g.window_end = r.i64();
    g.directed = r.u8() != 0;
    const auto n_nodes = r.u64();
    for (std::uint64_t i = 0; i < n_nodes; ++i) {
        Node n;
        n.id = r.str();
        n.window = r.u32();
        const auto kind = r.u8();
        if (kind >= kNumKinds) throw DataError("corrupt node kind");
        n.kind = static_cast<EntityKind>(kind);
        const auto n_attrs = r.u32();
        for (std::uint32_t a = 0; a < n_attrs; ++a) {
            std::string k = r.str();
            n.attrs[k] = r.str();
        }
        g.upsert_node(n);
    }
    if (g.nodes_.size() != n_nodes) throw DataError("duplicate node in serialized graph");
    const auto n_edges = r.u64();
    g.edges_.reserve(n_edges);
    for (std::uint64_t i = 0; i < n_edges; ++i) {
        Edge e;
        e.src = r.u32();
        e.dst = r.u32();
        const auto op = r.u8();
        if (op > static_cast<std::uint8_t>(Op::PseudoRoot)) throw DataError("corrupt edge op");
        e.op = static_cast<Op>(op);
        e.ts = r.i64();
        e.event_id = r.u64();
        e.flag = static_cast<EdgeFlag>(r.u8());
        if (e.src >= n_nodes || e.dst >= n_nodes) throw DataError("edge endpoint out of range");
        g.edges_.push_back(e);
    }
    return g;
}

std::vector<EdgeRecord> edge_records(const ProvGraph& g, bool include_synthetic) {
    std::vector<EdgeRecord> out;
    out.reserve(g.edge_count());
    for (const auto& e : g.edges()) {
        if (!include_synthetic && e.flag != EdgeFlag::None) continue;
        out.push_back({std::string(base_id(g.nodes()[e.src].id)),
                       std::string(base_id(g.nodes()[e.dst].id)), e.op, e.ts});
    }
    return out;
}

}  // namespace pidskit

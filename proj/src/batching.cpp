#include "pidskit/batching.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <unordered_map>

#include "pidskit/errors.hpp"
#include "pidskit/io.hpp"

namespace pidskit {

namespace {

constexpr std::int64_t kMinuteNs = 60'000'000'000;

struct FlatEdge {
    const ProvGraph* g;
    Edge e;
    std::uint32_t member;
};

bool flat_less(const FlatEdge& a, const FlatEdge& b) {
    if (a.e.ts != b.e.ts) return a.e.ts < b.e.ts;
    return a.e.event_id < b.e.event_id;
}

Batch rebuild(const std::vector<FlatEdge>& edges, std::size_t lo, std::size_t hi, std::int64_t start,
              std::int64_t end, BatchOrigin origin, bool directed) {
    Batch b;
    b.origin = origin;
    b.graph.window_start = start;
    b.graph.window_end = end;
    b.graph.directed = directed;
    std::vector<Edge> out;
    out.reserve(hi - lo);
    b.membership.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
        Edge e = edges[i].e;
        e.src = b.graph.upsert_node(edges[i].g->nodes()[edges[i].e.src]);
        e.dst = b.graph.upsert_node(edges[i].g->nodes()[edges[i].e.dst]);
        out.push_back(e);
        b.membership.push_back(edges[i].member);
    }
    b.graph.set_edges(std::move(out));
    return b;
}

// Cuts a (ts, event_id)-sorted edge list. Minutes chunks are aligned to
// `align` and clipped to `clip_end`; empty chunks are not emitted.
std::vector<Batch> chunk(const std::vector<FlatEdge>& edges, ChunkMode mode, std::int64_t size,
                         std::int64_t align, std::int64_t clip_end, BatchOrigin origin, bool directed) {
    if (size < 1) throw ConfigError("batch size must be at least 1");
    std::vector<Batch> out;
    if (mode == ChunkMode::Edges) {
        for (std::size_t lo = 0; lo < edges.size(); lo += static_cast<std::size_t>(size)) {
            const std::size_t hi = std::min(edges.size(), lo + static_cast<std::size_t>(size));
            out.push_back(rebuild(edges, lo, hi, edges[lo].e.ts, edges[hi - 1].e.ts + 1, origin, directed));
        }
        return out;
    }
    const std::int64_t width = size * kMinuteNs;
    auto index_of = [&](std::int64_t ts) {
        const std::int64_t d = ts - align;
        return d >= 0 ? d / width : -((-d + width - 1) / width);
    };
    std::size_t lo = 0;
    while (lo < edges.size()) {
        const std::int64_t k = index_of(edges[lo].e.ts);
        std::size_t hi = lo;
        while (hi < edges.size() && index_of(edges[hi].e.ts) == k) ++hi;
        const std::int64_t start = align + k * width;
        out.push_back(rebuild(edges, lo, hi, start, std::min(start + width, clip_end), origin, directed));
        lo = hi;
    }
    return out;
}

std::vector<FlatEdge> flatten(const Batch& b) {
    std::vector<FlatEdge> out;
    out.reserve(b.graph.edge_count());
    for (std::size_t i = 0; i < b.graph.edge_count(); ++i)
        out.push_back({&b.graph, b.graph.edges()[i], b.membership[i]});
    return out;
}

ChunkMode parse_mode(const std::string& m) {
    if (m == "edges") return ChunkMode::Edges;
    if (m == "minutes") return ChunkMode::Minutes;
    throw ConfigError("unknown batching mode: " + m);
}

}  // namespace

std::vector<Batch> wrap_windows(const std::vector<ProvGraph>& windows) {
    std::vector<Batch> out;
    out.reserve(windows.size());
    for (std::uint32_t i = 0; i < windows.size(); ++i) {
        Batch b;
        b.graph = windows[i];
        b.membership.assign(windows[i].edge_count(), i);
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<Batch> global_batch(const std::vector<Batch>& batches, ChunkMode mode, std::int64_t size) {
    if (batches.empty()) throw DataError("global batching: no input graphs");
    std::vector<FlatEdge> all;
    std::int64_t align = batches.front().graph.window_start;
    std::int64_t end = batches.front().graph.window_end;
    bool directed = true;
    for (const auto& b : batches) {
        auto f = flatten(b);
        all.insert(all.end(), f.begin(), f.end());
        align = std::min(align, b.graph.window_start);
        end = std::max(end, b.graph.window_end);
        directed = directed && b.graph.directed;
    }
    if (all.empty()) throw DataError("global batching: no edges");
    std::stable_sort(all.begin(), all.end(), flat_less);
    return chunk(all, mode, size, align, end, BatchOrigin::Global, directed);
}

std::vector<Batch> global_batch(const std::vector<ProvGraph>& windows, ChunkMode mode, std::int64_t size) {
    return global_batch(wrap_windows(windows), mode, size);
}

std::vector<Batch> intra_batch(const Batch& b, ChunkMode mode, std::int64_t size) {
    if (b.graph.edge_count() == 0) throw DataError("intra batching: empty window");
    auto edges = flatten(b);
    std::stable_sort(edges.begin(), edges.end(), flat_less);
    auto out = chunk(edges, mode, size, b.graph.window_start, b.graph.window_end, BatchOrigin::Intra,
                     b.graph.directed);
    if (out.size() == 1) {
        // A single chunk is the window itself.
        Batch same = b;
        same.origin = BatchOrigin::Intra;
        return {std::move(same)};
    }
    return out;
}

std::vector<Batch> intra_batch(const ProvGraph& w, ChunkMode mode, std::int64_t size, std::uint32_t window_index) {
    Batch b;
    b.graph = w;
    b.membership.assign(w.edge_count(), window_index);
    return intra_batch(b, mode, size);
}

std::vector<Batch> inter_batch(const std::vector<Batch>& batches, std::int64_t batch_size) {
    if (batch_size < 1) throw ConfigError("inter-graph batch size must be at least 1");
    std::vector<Batch> out;
    const std::size_t step = static_cast<std::size_t>(batch_size);
    for (std::size_t g0 = 0; g0 < batches.size(); g0 += step) {
        const std::size_t g1 = std::min(batches.size(), g0 + step);
        Batch m;
        m.origin = BatchOrigin::Inter;
        m.graph.window_start = batches[g0].graph.window_start;
        m.graph.window_end = batches[g0].graph.window_end;
        m.graph.directed = true;
        std::vector<Edge> edges;
        std::vector<std::uint32_t> members;
        for (std::size_t gi = g0; gi < g1; ++gi) {
            const auto& src = batches[gi];
            m.graph.window_start = std::min(m.graph.window_start, src.graph.window_start);
            m.graph.window_end = std::max(m.graph.window_end, src.graph.window_end);
            m.graph.directed = m.graph.directed && src.graph.directed;
            std::vector<std::uint32_t> row(src.graph.node_count());
            for (std::size_t r = 0; r < src.graph.node_count(); ++r) {
                Node n = src.graph.nodes()[r];
                n.window = static_cast<std::uint32_t>(gi);
                row[r] = m.graph.upsert_node(n);
            }
            for (std::size_t i = 0; i < src.graph.edge_count(); ++i) {
                Edge e = src.graph.edges()[i];
                e.src = row[e.src];
                e.dst = row[e.dst];
                edges.push_back(e);
                members.push_back(src.membership[i]);
            }
        }
        std::vector<std::size_t> order(edges.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (edges[a].ts != edges[b].ts) return edges[a].ts < edges[b].ts;
            return edges[a].event_id < edges[b].event_id;
        });
        std::vector<Edge> sorted;
        sorted.reserve(edges.size());
        for (auto i : order) {
            sorted.push_back(edges[i]);
            m.membership.push_back(members[i]);
        }
        m.graph.set_edges(std::move(sorted));
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<Batch> inter_batch(const std::vector<ProvGraph>& graphs, std::int64_t batch_size) {
    return inter_batch(wrap_windows(graphs), batch_size);
}

BatchingPlan batching_plan_from_config(const ConfigTree& cfg) {
    BatchingPlan p;
    p.global_method = cfg.get_string("batching.global_batching.used_method");
    p.global_size = cfg.get_int("batching.global_batching.batch_size");
    for (const auto& m : cfg.get_list("batching.intra_graph_batching.used_methods")) {
        if (m == "none") continue;
        if (m == "tgn_last_neighbor") p.last_neighbor_k = static_cast<int>(cfg.get_int("batching.intra_graph_batching.tgn_last_neighbor.k"));
        else p.intra_methods.push_back(m);
    }
    p.intra_size = cfg.get_int("batching.intra_graph_batching.batch_size");
    p.inter = cfg.get_string("batching.inter_graph_batching.used_method") == "graph_batching";
    p.inter_size = cfg.get_int("batching.inter_graph_batching.batch_size");
    return p;
}

std::vector<Batch> make_batches(const std::vector<ProvGraph>& windows, const BatchingPlan& plan) {
    auto cur = wrap_windows(windows);
    if (plan.global_method != "none") cur = global_batch(cur, parse_mode(plan.global_method), plan.global_size);
    for (const auto& m : plan.intra_methods) {
        const auto mode = parse_mode(m);
        std::vector<Batch> next;
        for (const auto& b : cur) {
            if (b.graph.edge_count() == 0) continue;
            auto parts = intra_batch(b, mode, plan.intra_size);
            for (auto& p : parts) next.push_back(std::move(p));
        }
        cur = std::move(next);
    }
    if (plan.inter) cur = inter_batch(cur, plan.inter_size);
    return cur;
}

std::vector<NeighborSnapshot> build_neighbor_index(const std::vector<const ProvGraph*>& batches, int k) {
    if (k < 1) throw ConfigError("last-neighbor k must be at least 1");
    std::unordered_map<std::string, std::deque<NeighborEntry>> buffers;
    std::vector<NeighborSnapshot> out;
    out.reserve(batches.size());
    std::int64_t latest = std::numeric_limits<std::int64_t>::min();

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const ProvGraph& g = *batches[bi];
        NeighborSnapshot snap;
        snap.per_node.resize(g.node_count());
        for (std::size_t r = 0; r < g.node_count(); ++r) {
            auto it = buffers.find(std::string(base_id(g.nodes()[r].id)));
            if (it != buffers.end()) snap.per_node[r].assign(it->second.begin(), it->second.end());
        }
        out.push_back(std::move(snap));

        std::int64_t first = std::numeric_limits<std::int64_t>::max();
        for (const auto& e : g.edges())
            if (e.flag == EdgeFlag::None) first = std::min(first, e.ts);
        if (first < latest)
            throw DataError("last-neighbor index: batch " + std::to_string(bi) +
                            " starts before events already recorded");
        for (const auto& e : g.edges()) {
            if (e.flag != EdgeFlag::None) continue;
            const Node& s = g.nodes()[e.src];
            const Node& d = g.nodes()[e.dst];
            auto push = [&](const Node& self, const Node& other) {
                auto& buf = buffers[std::string(base_id(self.id))];
                buf.push_front(NeighborEntry{std::string(base_id(other.id)), e.ts, e.op, other.kind, other.attrs});
                if (buf.size() > static_cast<std::size_t>(k)) buf.pop_back();
            };
            push(s, d);
            push(d, s);
            latest = std::max(latest, e.ts);
        }
    }
    return out;
}

std::vector<NeighborSnapshot> build_neighbor_index(const std::vector<Batch>& batches, int k) {
    std::vector<const ProvGraph*> graphs;
    graphs.reserve(batches.size());
    for (const auto& b : batches) graphs.push_back(&b.graph);
    return build_neighbor_index(graphs, k);
}

void inject_context(Batch& b, const NeighborSnapshot& snap) {
    const std::size_t n = std::min(snap.per_node.size(), b.graph.node_count());
    for (std::uint32_t r = 0; r < n; ++r) {
        const std::uint32_t window = b.graph.nodes()[r].window;
        for (const auto& ne : snap.per_node[r]) {
            std::uint32_t src;
            if (auto found = b.graph.find_node(ne.neighbor, window)) src = *found;
            else src = b.graph.upsert_node(Node{ne.neighbor, window, ne.kind, ne.attrs});
            b.graph.add_edge(Edge{src, r, ne.op, ne.ts, 0, EdgeFlag::Context});
            b.membership.push_back(kNoWindow);
        }
    }
}

void write_batches(const std::filesystem::path& path, const std::vector<Batch>& batches) {
    BinaryWriter w(path);
    w.magic("PBAT");
    w.u64(batches.size());
    for (const auto& b : batches) {
        w.u8(static_cast<std::uint8_t>(b.origin));
        b.graph.write(w);
        w.u64(b.membership.size());
        for (auto m : b.membership) w.u32(m);
    }
    w.close();
}

std::vector<Batch> read_batches(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("PBAT");
    std::vector<Batch> out(r.u64());
    for (auto& b : out) {
        const auto origin = r.u8();
        if (origin > static_cast<std::uint8_t>(BatchOrigin::Inter)) throw DataError("corrupt batch file: " + path.string());
        b.origin = static_cast<BatchOrigin>(origin);
        b.graph = ProvGraph::read(r);
        b.membership.resize(r.u64());
        for (auto& m : b.membership) m = r.u32();
        if (b.membership.size() != b.graph.edge_count()) throw DataError("corrupt batch file: " + path.string());
    }
    return out;
}

void write_snapshots(const std::filesystem::path& path, const std::vector<NeighborSnapshot>& snaps) {
    BinaryWriter w(path);
    w.magic("PNBR");
    w.u64(snaps.size());
    for (const auto& s : snaps) {
        w.u64(s.per_node.size());
        for (const auto& entries : s.per_node) {
            w.u32(static_cast<std::uint32_t>(entries.size()));
            for (const auto& e : entries) {
                w.str(e.neighbor);
                w.i64(e.ts);
                w.u8(static_cast<std::uint8_t>(e.op));
                w.u8(static_cast<std::uint8_t>(e.kind));
                w.u32(static_cast<std::uint32_t>(e.attrs.size()));
                for (const auto& [k, v] : e.attrs) {
                    w.str(k);
                    w.str(v);
                }
            }
        }
    }
    w.close();
}

std::vector<NeighborSnapshot> read_snapshots(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("PNBR");
    std::vector<NeighborSnapshot> out(r.u64());
    for (auto& s : out) {
        s.per_node.resize(r.u64());
        for (auto& entries : s.per_node) {
            entries.resize(r.u32());
            for (auto& e : entries) {
                e.neighbor = r.str();
                e.ts = r.i64();
                e.op = static_cast<Op>(r.u8());
                e.kind = static_cast<EntityKind>(r.u8());
                const auto na = r.u32();
                for (std::uint32_t i = 0; i < na; ++i) {
                    auto k = r.str();
                    e.attrs[k] = r.str();
                }
            }
        }
    }
    return out;
}

}  // namespace pidskit

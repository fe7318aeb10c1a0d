#pragma once

// Provenance entities, events and time-windowed graphs.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pidskit {

class BinaryWriter;
class BinaryReader;

enum class EntityKind : std::uint8_t { Subject, File, Netflow };
inline constexpr int kNumKinds = 3;

std::string_view kind_name(EntityKind k);
std::optional<EntityKind> parse_kind(std::string_view s);

// The twelve audit operations plus the synthetic op used by pseudo-root edges.
enum class Op : std::uint8_t {
    Read, Write, Execute, Fork, Open, Close, Unlink, Connect, Send, Recv, Mmap, Clone,
    PseudoRoot,
};
// Number of real audit ops; also the edge-type classifier's output width.
inline constexpr int kNumOps = 12;

std::string_view op_name(Op op);
std::optional<Op> parse_op(std::string_view s);

using Attrs = std::map<std::string, std::string>;

struct Entity {
    std::string id;  // 32 lowercase hex chars
    EntityKind kind = EntityKind::Subject;
    Attrs attrs;     // type always present; path/cmd_line/remote_ip/remote_port per kind

    bool operator==(const Entity&) const = default;
};

struct ProvEvent {
    std::uint64_t event_id = 0;
    std::int64_t ts = 0;  // ns since epoch
    Op op = Op::Read;
    Entity src;
    Entity dst;
};

enum class EdgeFlag : std::uint8_t {
    None,
    PseudoRoot,  // added by the pseudo-root transform
    Context,     // last-neighbor context injected at training time
};

struct Node {
    std::string id;             // base entity id, or "<id>#<version>" after DAG conversion
    std::uint32_t window = 0;   // namespace for merged batches
    EntityKind kind = EntityKind::Subject;
    Attrs attrs;

    bool operator==(const Node&) const = default;
};

struct Edge {
    std::uint32_t src = 0;
    std::uint32_t dst = 0;
    Op op = Op::Read;
    std::int64_t ts = 0;
    std::uint64_t event_id = 0;
    EdgeFlag flag = EdgeFlag::None;

    bool operator==(const Edge&) const = default;
};

// Strips a "#<version>" suffix.
std::string_view base_id(std::string_view node_id);

class ProvGraph {
public:
    std::int64_t window_start = 0;
    std::int64_t window_end = 0;
    bool directed = true;

    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<Edge>& edges() const { return edges_; }
    std::vector<Edge>& mutable_edges() { return edges_; }

    // Inserts or merges (last writer wins per attribute). Returns the row.
    std::uint32_t upsert_node(const Node& n);
    std::optional<std::uint32_t> find_node(std::string_view id, std::uint32_t window = 0) const;

    void add_edge(const Edge& e) { edges_.push_back(e); }
    void set_edges(std::vector<Edge> edges) { edges_ = std::move(edges); }

    // Ascending ts, ties by event_id, otherwise stable.
    void sort_edges();

    std::size_t node_count() const { return nodes_.size(); }
    std::size_t edge_count() const { return edges_.size(); }

    bool operator==(const ProvGraph& o) const {
        return window_start == o.window_start && window_end == o.window_end &&
               directed == o.directed && nodes_ == o.nodes_ && edges_ == o.edges_;
    }

    void write(BinaryWriter& w) const;
    static ProvGraph read(BinaryReader& r);

private:
    std::vector<Node> nodes_;
    std::vector<Edge> edges_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

// (src id, dst id, op, ts) with ids resolved; used for conservation checks.
struct EdgeRecord {
    std::string src;
    std::string dst;
    Op op;
    std::int64_t ts;

    auto operator<=>(const EdgeRecord&) const = default;
};

std::vector<EdgeRecord> edge_records(const ProvGraph& g, bool include_synthetic = false);

}  // namespace pidskit

#pragma once

// Pipeline stage 4: repartitioning windows into training batches, and the
// last-neighbor index consumed by temporal encoders.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "pidskit/config.hpp"
#include "pidskit/graph.hpp"

namespace pidskit {

enum class BatchOrigin : std::uint8_t { None, Global, Intra, Inter };
enum class ChunkMode { Edges, Minutes };

// Membership value for synthetic context edges, which have no source window.
inline constexpr std::uint32_t kNoWindow = std::numeric_limits<std::uint32_t>::max();

struct Batch {
    ProvGraph graph;
    std::vector<std::uint32_t> membership;  // edge index -> source window index
    BatchOrigin origin = BatchOrigin::None;
};

// Each window as its own batch; membership = position in `windows`.
std::vector<Batch> wrap_windows(const std::vector<ProvGraph>& windows);

// Flattens all edges in (ts, event_id) order and cuts them into chunks of
// `size` edges or `size`-minute spans aligned to the earliest window start.
std::vector<Batch> global_batch(const std::vector<ProvGraph>& windows, ChunkMode mode, std::int64_t size);
std::vector<Batch> global_batch(const std::vector<Batch>& batches, ChunkMode mode, std::int64_t size);

// Same chunking inside one window; chunks never cross the window.
std::vector<Batch> intra_batch(const ProvGraph& w, ChunkMode mode, std::int64_t size,
                               std::uint32_t window_index = 0);
std::vector<Batch> intra_batch(const Batch& b, ChunkMode mode, std::int64_t size);

// Merges consecutive groups of `batch_size` graphs. Node rows are namespaced
// by the graph's position in the input list (Node::window).
std::vector<Batch> inter_batch(const std::vector<ProvGraph>& graphs, std::int64_t batch_size);
std::vector<Batch> inter_batch(const std::vector<Batch>& batches, std::int64_t batch_size);

struct BatchingPlan {
    std::string global_method = "none";  // none | edges | minutes
    std::int64_t global_size = 1;
    std::vector<std::string> intra_methods;  // edges | minutes | tgn_last_neighbor, in order
    std::int64_t intra_size = 1;
    int last_neighbor_k = 0;  // 0 when tgn_last_neighbor is not requested
    bool inter = false;
    std::int64_t inter_size = 1;
};

BatchingPlan batching_plan_from_config(const ConfigTree& cfg);

// Global, then intra, then inter; membership always refers to `windows`.
std::vector<Batch> make_batches(const std::vector<ProvGraph>& windows, const BatchingPlan& plan);

struct NeighborEntry {
    std::string neighbor;  // base id
    std::int64_t ts = 0;
    Op op = Op::Read;
    EntityKind kind = EntityKind::Subject;
    Attrs attrs;

    bool operator==(const NeighborEntry&) const = default;
};

// Per batch node row: the k most recent earlier interactions, newest first.
struct NeighborSnapshot {
    std::vector<std::vector<NeighborEntry>> per_node;

    bool operator==(const NeighborSnapshot&) const = default;
};

// One forward pass: snapshot every node of batch b, then record b's real
// edges (both endpoints). Throws DataError when a batch starts before
// events already recorded.
std::vector<NeighborSnapshot> build_neighbor_index(const std::vector<const ProvGraph*>& batches, int k);
std::vector<NeighborSnapshot> build_neighbor_index(const std::vector<Batch>& batches, int k);

// Adds each snapshot neighbor as a node (same namespace as the target) and a
// Context-flagged edge neighbor -> node.
void inject_context(Batch& b, const NeighborSnapshot& snap);

void write_batches(const std::filesystem::path& path, const std::vector<Batch>& batches);
std::vector<Batch> read_batches(const std::filesystem::path& path);
void write_snapshots(const std::filesystem::path& path, const std::vector<NeighborSnapshot>& snaps);
std::vector<NeighborSnapshot> read_snapshots(const std::filesystem::path& path);

}  // namespace pidskit

#pragma once

// Pipeline stage 2: per-window structural transforms.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pidskit/graph.hpp"

namespace pidskit {

// Adds (v,u,op,ts) for each (u,v,op,ts) unless that reverse arc already exists.
ProvGraph to_undirected(const ProvGraph& g);

// Keeps only the earliest edge for each (src, dst, op).
std::pair<ProvGraph, std::size_t> remove_redundant(const ProvGraph& g);

// Node versioning in timestamp order: an incoming edge that arrives after
// the target has emitted from its current version bumps the target to a new
// version "<id>#<n>". Outgoing edges leave the current version.
ProvGraph to_dag(const ProvGraph& g);

// For every node, one PseudoRoot-flagged edge from each in-degree-0 ancestor,
// stamped at window_start. Throws std::invalid_argument on a cyclic graph.
ProvGraph pseudo_root_edges(const ProvGraph& g);

bool is_acyclic(const ProvGraph& g);

// Applies the named transforms in order ("none" is skipped).
ProvGraph apply_transforms(const ProvGraph& g, const std::vector<std::string>& methods);

}  // namespace pidskit

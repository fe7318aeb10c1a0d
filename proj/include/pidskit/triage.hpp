#pragma once

// Pipeline stage 7: ranking of detected nodes.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pidskit/evaluate.hpp"

namespace pidskit {

struct TriageResult {
    std::vector<std::pair<std::string, double>> ranked;  // score descending, ties by id
};

// Nodes with score > threshold, highest first.
TriageResult triage_by_score(const ScoreReport& report);

// rank,node_id,score
void write_triage(const TriageResult& t, const std::filesystem::path& path);

}  // namespace pidskit

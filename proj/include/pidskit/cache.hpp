#pragma once

// Content-addressed stage cache.
//
// Layout: <root>/<stage_name>/<digest>/{outputs..., _COMPLETE, config_snapshot}
// A stage digest hashes the stage name, its canonicalized arguments and the
// digest of the previous stage, so changing a stage's arguments invalidates
// that stage and everything downstream of it but nothing upstream.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pidskit/config.hpp"

namespace pidskit {

enum class Stage { Construction, Transformation, Featurization, Batching, Training, Evaluation, Triage };

inline constexpr std::array<Stage, 7> kStages = {
    Stage::Construction, Stage::Transformation, Stage::Featurization, Stage::Batching,
    Stage::Training,     Stage::Evaluation,     Stage::Triage};

std::string_view stage_name(Stage s);
inline std::size_t stage_index(Stage s) { return static_cast<std::size_t>(s); }

// Accepts canonical names plus the aliases used by experiment configs
// (feat_training, gnn_training, ...). Throws ConfigError on anything else.
Stage parse_stage(std::string_view name);

inline constexpr std::string_view kRootParent = "root";
inline constexpr std::string_view kMarkerFile = "_COMPLETE";
inline constexpr std::string_view kSnapshotFile = "config_snapshot";

std::string sha256_hex(std::string_view bytes);

// Keys dropped from every level before hashing; they cannot change outputs.
bool is_excluded_arg_key(std::string_view key);

// Sorted keys, normalized scalars, excluded keys removed. Output is JSON text.
std::string canonicalize_args(const ConfigNode& stage_cfg);

std::string stage_hash(Stage stage, std::string_view canonical_args, std::string_view parent_digest);

// The slice of the resolved config that parameterizes `stage`. Construction
// also receives the top-level `dataset` and `dataset_fingerprint` keys.
ConfigNode stage_args(const ConfigTree& cfg, Stage stage);

struct StageKey {
    Stage stage = Stage::Construction;
    std::string args_digest;    // this stage's chained digest; names its directory
    std::string parent_digest;  // previous stage's digest or "root"
};

struct CacheDecision {
    enum class Kind { Hit, Miss };
    Kind kind = Kind::Miss;
    std::filesystem::path artifact_dir;
    bool corrupted_marker = false;
    bool replace = false;  // a marked entry exists and this run must overwrite it

    bool hit() const { return kind == Kind::Hit; }
};

std::filesystem::path stage_dir(const std::filesystem::path& root, const StageKey& key);

CacheDecision resolve_stage(const StageKey& key, const std::filesystem::path& root, bool force);

// Fresh scratch directory next to the final location. Callers write outputs
// there and hand it to commit_stage.
std::filesystem::path begin_stage_output(const StageKey& key, const std::filesystem::path& root);

enum class CommitOutcome { Committed, LostRace };

// Writes config_snapshot, fsyncs, renames the scratch directory onto the
// digest path and finally writes the marker. If another process committed the
// same key first, the scratch directory is discarded and LostRace returned once
// the winner's marker is visible. A valid existing entry is only overwritten
// when `replace` is set.
CommitOutcome commit_stage(const StageKey& key, const std::filesystem::path& root,
                           const std::filesystem::path& scratch, std::string_view snapshot, bool replace = false);

struct PlannedStage {
    StageKey key;
    std::string canonical_args;
    CacheDecision decision;
};

struct PipelinePlan {
    std::filesystem::path root;
    std::vector<PlannedStage> stages;  // always seven, in pipeline order
};

struct PlanOptions {
    std::filesystem::path cache_root;
    std::optional<Stage> restart_from;  // this stage and later are forced to Miss
    bool fresh_root = false;            // allocate <cache_root>/fresh/<timestamp>
};

PipelinePlan plan_pipeline(const ConfigTree& cfg, const PlanOptions& opts);

std::int64_t now_ns();

}  // namespace pidskit

#pragma once

// Grid sweeps, repeated-seed instability runs and tuned overlays.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pidskit/config.hpp"
#include "pidskit/pipeline.hpp"

namespace pidskit {

struct SweepSpec {
    std::string method = "grid";
    std::map<std::string, std::vector<ConfigNode>> parameters;  // dotted path -> candidate values
};

// Sweep file: `method: grid` and `parameters: {path: {values: [...]}}`.
SweepSpec parse_sweep_spec(const ConfigNode& doc);
SweepSpec load_sweep_spec(const std::filesystem::path& path);

// Row-major over the lexicographically ordered keys (the last key varies fastest).
std::vector<OverrideSet> expand_grid(const SweepSpec& spec);

struct SweepRun {
    std::size_t index = 0;
    OverrideSet overrides;
    std::string status;  // "ok" or "failed"
    std::string error;
    std::map<std::string, double> metrics;
    std::filesystem::path metrics_path;
};

struct SweepReport {
    std::vector<SweepRun> runs;
    std::filesystem::path report_path;  // JSONL, one record per run in grid order
};

// Runs every override set of the grid. Each set is claimed with an atomically
// created file under `<cache_root>/sweeps/<id>/`, so several processes may work
// through one sweep together; every process waits for the others and writes
// the full report. A failed run is recorded and the sweep continues.
SweepReport run_sweep(const ConfigTree& base, const SweepSpec& spec, const RunContext& ctx);

struct MetricAggregate {
    std::string metric;
    double mean = 0.0;
    double std = 0.0;                // population standard deviation
    std::optional<double> std_rel;   // percent; absent when mean is 0
};

// Metrics missing from some runs aggregate over the runs that have them.
std::vector<MetricAggregate> aggregate_metrics(const std::vector<std::map<std::string, double>>& runs);

struct InstabilityResult {
    std::vector<std::map<std::string, double>> runs;
    std::vector<MetricAggregate> aggregates;
    std::filesystem::path report_path;
};

// Runs the pipeline `iterations` times with <seed_key> = base + i, forcing
// re-execution from `restart_from` onward.
InstabilityResult run_n_times(const ConfigTree& cfg, const RunContext& ctx, int iterations = 5,
                              Stage restart_from = Stage::Training, const std::string& seed_key = "training.seed");

// <config_dir>/tuned/<system>/<dataset>.yml
std::filesystem::path tuned_overlay_path(const std::string& system, const std::string& dataset,
                                         const std::filesystem::path& config_dir);

// Overlay tree; errors name the expected file.
ConfigNode resolve_tuned(const std::string& system, const std::string& dataset, const std::filesystem::path& config_dir);

// Merges the overlay over `base` the same way `_include_yml` does.
ConfigTree apply_tuned(const ConfigTree& base, const std::string& system, const std::string& dataset,
                       const std::filesystem::path& config_dir);

}  // namespace pidskit

#pragma once

// Seven-stage execution over the content-addressed cache.
//
// Stage outputs:
//   construction    train.bin val.bin test.bin labels.csv summary.json
//   transformation  train.bin val.bin test.bin
//   featurization   featurization.json [embeddings.bin]
//   batching        {train,val,test}_batches.bin [{train,val,test}_neighbors.bin]
//   training        checkpoint_epoch_<E>.bin training_log.jsonl
//   evaluation      metrics.jsonl final.json epoch_<E>/{scores,score_histogram,top_ranked}.csv
//   triage          triage.csv

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pidskit/cache.hpp"
#include "pidskit/config.hpp"
#include "pidskit/graph.hpp"

namespace pidskit {

struct RunContext {
    std::filesystem::path data_dir = "data";        // holds <dataset>/events.jsonl and labels.csv
    std::filesystem::path cache_root = "artifacts";
    std::optional<Stage> restart_from;
    bool fresh_root = false;
    std::ostream* log = nullptr;                    // progress and warnings; null silences
};

struct StageRecord {
    Stage stage;
    bool hit = false;
    std::filesystem::path dir;
    double seconds = 0.0;
};

struct RunResult {
    PipelinePlan plan;
    std::vector<StageRecord> records;
    std::filesystem::path metrics_path;
    std::filesystem::path run_log;
    std::map<std::string, double> final_metrics;  // final epoch
    int final_epoch = 0;
};

// Directory holding events.jsonl and labels.csv for `dataset`.
std::filesystem::path dataset_dir(const RunContext& ctx, const std::string& dataset);

// Datasets are the known benchmark ids plus any directory present under data_dir.
bool dataset_available(const RunContext& ctx, const std::string& dataset);

// Sets the top-level `dataset` and `dataset_fingerprint` keys (the
// fingerprint hashes the input files so regenerated data invalidates the cache).
ConfigTree bind_dataset(const ConfigTree& cfg, const RunContext& ctx, const std::string& dataset);

// Plans and executes; `cfg` must already be bound to a dataset.
RunResult run_pipeline(const ConfigTree& cfg, const RunContext& ctx);

// Metric values of the last epoch found in a metrics.jsonl file.
std::map<std::string, double> read_final_metrics(const std::filesystem::path& metrics_jsonl, int* epoch = nullptr);

void write_graphs(const std::filesystem::path& path, const std::vector<ProvGraph>& graphs);
std::vector<ProvGraph> read_graphs(const std::filesystem::path& path);

}  // namespace pidskit

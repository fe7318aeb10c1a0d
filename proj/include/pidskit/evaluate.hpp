#pragma once

// Pipeline stage 6: node anomaly scores, thresholds, metrics and plot tables.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pidskit/ingest.hpp"
#include "pidskit/model.hpp"

namespace pidskit {

enum class Reduce { Max, Mean };

using ScoreMap = std::map<std::string, double>;

// Per-edge losses go to both endpoints, per-node losses to the node; node
// ids are base ids. Each node's losses are reduced across all batches.
ScoreMap score_nodes(std::vector<Parameter>& params, const ModelConfig& cfg, const std::vector<Batch>& batches,
                     NodeFeaturizer& feat, Reduce reduce);

// Lower-level form: reduce a list of (node id, loss) assignments.
ScoreMap reduce_scores(const std::vector<std::pair<std::string, double>>& assigned, Reduce reduce);

double threshold_fixed(double v);
// Max validation score; detections use the strict rule score > threshold.
double threshold_max_val(const ScoreMap& val_scores);
// Two-cluster 1-D k-means from min/max centroids; midpoint of the centroids.
double threshold_kmeans(const std::vector<double>& scores, int iters);

struct ScoreReport {
    ScoreMap scores;
    std::map<std::string, int> labels;  // attack id for labeled nodes present in scores
    double threshold = 0.0;
    int epoch = 0;
};

ScoreReport make_report(ScoreMap scores, const GroundTruth& gt, double threshold, int epoch);

struct MetricSet {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    std::optional<double> average_precision;
    std::optional<double> auc_roc;
    std::optional<double> discrimination;
    std::map<int, double> attack_recall;  // attack id -> detected share of its scored nodes

    // Ordered (name, value) pairs as written to metrics.jsonl.
    std::vector<std::pair<std::string, double>> named() const;
};

// Descending score, ties by ascending node id.
std::vector<std::pair<std::string, double>> ranked(const ScoreMap& scores);

double average_precision(const std::vector<bool>& ranked_labels);
// Mann-Whitney probability that a positive outranks a negative, ties 1/2.
double auc_roc(const std::vector<double>& scores, const std::vector<bool>& labels);

MetricSet compute_metrics(const ScoreReport& report);

// Min-max normalized scores; all zeros when every score is equal.
ScoreMap normalize_scores(const ScoreMap& scores);

inline constexpr int kHistogramBins = 50;

// Writes score_histogram.csv (series,bin,lo,hi,count) and top_ranked.csv
// (rank,node_id,score,label) into `dir`.
void export_plot_data(const ScoreReport& report, const std::filesystem::path& dir, std::size_t top_k = 200);

// One JSON object per line: {"epoch":E,"metric":"name","value":v}.
std::string metrics_jsonl(int epoch, const MetricSet& m);

}  // namespace pidskit

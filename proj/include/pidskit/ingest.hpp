#pragma once

// Pipeline stage 1: event parsing, window construction, labels and splits.
//
// Event format, one JSON object per line:
//   {"id": <u64>, "ts": <ns>, "op": "<op>",
//    "src": {"id": "<32 hex>", "kind": "subject|file|netflow", "type": "...",
//            "path": "...", "cmd_line": "...", "remote_ip": "...", "remote_port": "..."},
//    "dst": {...}}
// Label format, one node per line: <32 hex node id>,<attack id>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pidskit/graph.hpp"

namespace pidskit {

inline constexpr std::array<std::string_view, 13> kKnownDatasets = {
    "CADETS_E3", "THEIA_E3",  "CLEARSCOPE_E3", "FIVEDIRECTIONS_E3", "TRACE_E3",
    "CADETS_E5", "THEIA_E5",  "CLEARSCOPE_E5", "FIVEDIRECTIONS_E5", "TRACE_E5",
    "optc_h201", "optc_h501", "optc_h051"};

bool is_known_dataset(std::string_view name);

bool is_entity_id(std::string_view s);

// Streams events one line at a time. Malformed lines are counted and skipped;
// finish() raises once the malformed share exceeds 1%.
class EventReader {
public:
    explicit EventReader(std::istream& in) : in_(in) {}

    std::optional<ProvEvent> next();
    // Throws DataError when more than 1% of non-blank lines were malformed.
    void finish() const;

    std::size_t parsed() const { return parsed_; }
    std::size_t skipped() const { return skipped_; }

private:
    std::istream& in_;
    std::size_t parsed_ = 0;
    std::size_t skipped_ = 0;
    std::string line_;
};

// Parses one record; nullopt if malformed.
std::optional<ProvEvent> parse_event_line(std::string_view line);
std::string format_event_line(const ProvEvent& e);

struct ParseSummary {
    std::vector<ProvEvent> events;
    std::size_t parsed = 0;
    std::size_t skipped = 0;
};

ParseSummary parse_events(std::istream& in);
ParseSummary parse_events_file(const std::filesystem::path& path);

inline constexpr std::int64_t kReorderSlackNs = 60'000'000'000;

// Windows of `window_minutes`, aligned to the minute floor of the earliest
// event. Out-of-order events are tolerated within a 60 s slack. Empty
// windows are not emitted.
std::vector<ProvGraph> build_windows(std::vector<ProvEvent> events, int window_minutes = 15);

struct GroundTruth {
    std::map<std::string, int> malicious;  // node id -> attack id
    std::string dataset_id;

    bool contains(std::string_view id) const { return malicious.count(std::string(id)) != 0; }
};

GroundTruth load_ground_truth(const std::filesystem::path& path, std::string dataset_id = {});
GroundTruth parse_ground_truth(std::istream& in, std::string dataset_id = {});

struct DatasetSplit {
    std::vector<ProvGraph> train;
    std::vector<ProvGraph> val;
    std::vector<ProvGraph> test;
    std::int64_t train_end = 0;
    std::int64_t val_end = 0;
};

// Windows go to train when window_start < train_end, to val when
// window_start < val_end, otherwise to test.
DatasetSplit split_dataset(std::vector<ProvGraph> windows, const GroundTruth& gt,
                           std::int64_t train_end, std::int64_t val_end);

// Boundaries placed at fractions of [first window start, last window end).
std::pair<std::int64_t, std::int64_t> split_boundaries(const std::vector<ProvGraph>& windows,
                                                       double train_frac, double val_frac);

struct SyntheticParams {
    std::uint64_t seed = 1;
    std::int64_t n_benign_events = 50'000;
    int n_attack_chains = 2;
    int span_hours = 24;
};

struct SyntheticDataset {
    std::string events;  // event-format text
    std::string labels;  // label-format text
    std::int64_t start_ns = 0;
    std::int64_t end_ns = 0;
};

// Nodes contributed to the label file by one attack chain.
inline constexpr int kNodesPerAttackChain = 4;

SyntheticDataset generate_synthetic(const SyntheticParams& p);

// Writes events.jsonl and labels.csv into `dir`.
void write_synthetic(const SyntheticParams& p, const std::filesystem::path& dir);

}  // namespace pidskit

#include "pidskit/cache.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "pidskit/errors.hpp"

namespace pidskit {
namespace fs = std::filesystem;

namespace {

struct StageAlias {
    std::string_view name;
    Stage stage;
};

constexpr StageAlias kAliases[] = {
    {"construction", Stage::Construction},
    {"graph_construction", Stage::Construction},
    {"transformation", Stage::Transformation},
    {"graph_transformation", Stage::Transformation},
    {"featurization", Stage::Featurization},
    {"feat_training", Stage::Featurization},
    {"feat_inference", Stage::Featurization},
    {"batching", Stage::Batching},
    {"training", Stage::Training},
    {"gnn_training", Stage::Training},
    {"evaluation", Stage::Evaluation},
    {"gnn_evaluation", Stage::Evaluation},
    {"triage", Stage::Triage},
};

void append_json_string(std::string& out, std::string_view s) {
    out += '"';
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    out += '"';
}

void canonical_into(std::string& out, const ConfigNode& n) {
    switch (n.kind()) {
        case ConfigNode::Kind::Map: {
            out += '{';
            bool first = true;
            // std::map iterates in lexicographic byte order.
            for (const auto& [k, v] : n.as_map()) {
                if (is_excluded_arg_key(k)) continue;
                if (!first) out += ',';
                first = false;
                append_json_string(out, k);
                out += ':';
                canonical_into(out, v);
            }
            out += '}';
            return;
        }
        case ConfigNode::Kind::List: {
            out += '[';
            bool first = true;
            for (const auto& v : n.as_list()) {
                if (!first) out += ',';
                first = false;
                canonical_into(out, v);
            }
            out += ']';
            return;
        }
        case ConfigNode::Kind::String:
            append_json_string(out, n.as_string());
            return;
        default:
            out += render_scalar(n);
    }
}

void fsync_path(const fs::path& p, bool directory) {
    const int fd = ::open(p.c_str(), directory ? (O_RDONLY | O_DIRECTORY) : O_RDONLY);
    if (fd < 0) return;
    ::fsync(fd);
    ::close(fd);
}

void fsync_tree(const fs::path& dir) {
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        fsync_path(entry.path(), entry.is_directory());
    }
    fsync_path(dir, true);
}

void write_file_synced(const fs::path& p, std::string_view content) {
    {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw PipelineError("cannot write " + p.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw PipelineError("short write to " + p.string());
    }
    fsync_path(p, false);
}

// Marker contents: "<digest>\n<completion ns>\n".
bool marker_valid(const fs::path& marker, std::string_view digest) {
    std::ifstream in(marker);
    if (!in) return false;
    std::string d, ts;
    if (!std::getline(in, d) || !std::getline(in, ts)) return false;
    if (d != digest || ts.empty()) return false;
    for (char c : ts)
        if (c < '0' || c > '9') return false;
    return true;
}

std::atomic<unsigned> g_scratch_counter{0};

}  // namespace

std::string_view stage_name(Stage s) {
    switch (s) {
        case Stage::Construction: return "construction";
        case Stage::Transformation: return "transformation";
        case Stage::Featurization: return "featurization";
        case Stage::Batching: return "batching";
        case Stage::Training: return "training";
        case Stage::Evaluation: return "evaluation";
        case Stage::Triage: return "triage";
    }
    return "?";
}

Stage parse_stage(std::string_view name) {
    for (const auto& a : kAliases)
        if (a.name == name) return a.stage;
    throw ConfigError("invalid stage name: '" + std::string(name) + "'");
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw PipelineError("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xF];
    }
    return out;
}

bool is_excluded_arg_key(std::string_view key) {
    static const std::set<std::string_view> kExcluded = {
        "num_workers", "workers", "n_workers", "log_level", "verbose", "logging", "use_wandb"};
    return kExcluded.count(key) != 0;
}

std::string canonicalize_args(const ConfigNode& stage_cfg) {
    std::string out;
    canonical_into(out, stage_cfg);
    return out;
}

std::string stage_hash(Stage stage, std::string_view canonical_args, std::string_view parent_digest) {
    std::string buf = "pidskit-stage-v1";
    buf += '\0';
    buf += stage_name(stage);
    buf += '\0';
    buf += canonical_args;
    buf += '\0';
    buf += parent_digest;
    return sha256_hex(buf);
}

ConfigNode stage_args(const ConfigTree& cfg, Stage stage) {
    const std::string section(stage_name(stage));
    ConfigMap m;
    const ConfigNode* n = cfg.find(section);
    m[section] = n ? *n : ConfigNode{};
    if (stage == Stage::Construction) {
        const ConfigNode* ds = cfg.find("dataset");
        m["dataset"] = ds ? *ds : ConfigNode{};
        if (const ConfigNode* fp = cfg.find("dataset_fingerprint")) m["dataset_fingerprint"] = *fp;
    }
    return m;
}

fs::path stage_dir(const fs::path& root, const StageKey& key) {
    return root / std::string(stage_name(key.stage)) / key.args_digest;
}

CacheDecision resolve_stage(const StageKey& key, const fs::path& root, bool force) {
    CacheDecision d;
    d.artifact_dir = stage_dir(root, key);
    std::error_code ec;
    fs::create_directories(d.artifact_dir.parent_path(), ec);
    if (ec) throw PipelineError("cannot create " + d.artifact_dir.parent_path().string() + ": " + ec.message());

    const fs::path marker = d.artifact_dir / std::string(kMarkerFile);
    const bool complete = fs::exists(marker);
    if (complete && !marker_valid(marker, key.args_digest)) d.corrupted_marker = true;
    if (complete && !d.corrupted_marker && !force) {
        d.kind = CacheDecision::Kind::Hit;
        return d;
    }
    d.kind = CacheDecision::Kind::Miss;
    d.replace = complete;
    if (!fs::exists(d.artifact_dir)) {
        fs::create_directory(d.artifact_dir, ec);
        if (ec && !fs::exists(d.artifact_dir))
            throw PipelineError("cannot create " + d.artifact_dir.string() + ": " + ec.message());
    }
    return d;
}

fs::path begin_stage_output(const StageKey& key, const fs::path& root) {
    const fs::path parent = root / std::string(stage_name(key.stage));
    fs::create_directories(parent);
    const fs::path scratch = parent / (".tmp-" + key.args_digest.substr(0, 16) + "-" +
                                       std::to_string(::getpid()) + "-" +
                                       std::to_string(g_scratch_counter.fetch_add(1)) + "-" +
                                       std::to_string(now_ns()));
    fs::create_directories(scratch);
    return scratch;
}

CommitOutcome commit_stage(const StageKey& key, const fs::path& root, const fs::path& scratch,
                           std::string_view snapshot, bool replace) {
    const fs::path target = stage_dir(root, key);
    const fs::path marker = target / std::string(kMarkerFile);
    if (!replace && marker_valid(marker, key.args_digest)) {
        fs::remove_all(scratch);
        return CommitOutcome::LostRace;
    }
    write_file_synced(scratch / std::string(kSnapshotFile), snapshot);
    fsync_tree(scratch);

    // A forced re-run replaces an existing complete directory. Drop its
    // marker first so nobody treats the half-replaced state as a Hit.
    fs::path trash;
    if (replace && fs::exists(marker)) {
        fs::remove(marker);
        trash = scratch.string() + ".old";
        fs::rename(target, trash);
    }

    // rename(2) onto an empty directory succeeds; onto a populated one it
    // fails, which is how a concurrent winner is detected.
    for (int attempt = 0;; ++attempt) {
        if (::rename(scratch.c_str(), target.c_str()) == 0) break;
        const int err = errno;
        if (err != ENOTEMPTY && err != EEXIST) {
            if (!trash.empty() && !fs::exists(target)) fs::rename(trash, target);
            throw PipelineError("commit of " + target.string() + " failed: " + std::strerror(err));
        }
        // The winner writes its marker right after its rename.
        for (int i = 0; i < 200; ++i) {
            if (marker_valid(marker, key.args_digest)) {
                fs::remove_all(scratch);
                if (!trash.empty()) fs::remove_all(trash);
                return CommitOutcome::LostRace;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        if (attempt > 0)
            throw PipelineError("cannot replace stale directory " + target.string());
        // Populated but never marked: left behind by a crash between rename and marker.
        const fs::path stale = scratch.string() + ".stale";
        fs::rename(target, stale);
        fs::remove_all(stale);
    }
    if (!trash.empty()) fs::remove_all(trash);
    fsync_path(target.parent_path(), true);

    write_file_synced(marker, key.args_digest + "\n" + std::to_string(now_ns()) + "\n");
    fsync_path(target, true);
    return CommitOutcome::Committed;
}

PipelinePlan plan_pipeline(const ConfigTree& cfg, const PlanOptions& opts) {
    PipelinePlan plan;
    plan.root = opts.cache_root;
    if (opts.fresh_root) {
        // Timestamp plus pid keeps concurrent fresh runs apart.
        plan.root = opts.cache_root / "fresh" /
                    (std::to_string(now_ns()) + "-" + std::to_string(::getpid()));
    }
    fs::create_directories(plan.root);

    std::string parent(kRootParent);
    for (Stage s : kStages) {
        PlannedStage ps;
        ps.canonical_args = canonicalize_args(stage_args(cfg, s));
        ps.key.stage = s;
        ps.key.parent_digest = parent;
        ps.key.args_digest = stage_hash(s, ps.canonical_args, parent);
        const bool force = opts.restart_from && stage_index(s) >= stage_index(*opts.restart_from);
        ps.decision = resolve_stage(ps.key, plan.root, force);
        parent = ps.key.args_digest;
        plan.stages.push_back(std::move(ps));
    }
    return plan;
}

std::int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace pidskit

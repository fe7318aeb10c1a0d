#include "pidskit/experiments.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <thread>

#include "json.hpp"
#include "pidskit/cache.hpp"
#include "pidskit/errors.hpp"
#include "pidskit/io.hpp"

namespace fs = std::filesystem;

namespace pidskit {

namespace {

void note(const RunContext& ctx, const std::string& msg) {
    if (ctx.log) *ctx.log << msg << '\n';
}

// A fresh root is allocated once so every run of an experiment shares it.
RunContext pin_root(const RunContext& ctx) {
    RunContext out = ctx;
    if (ctx.fresh_root) {
        out.cache_root = ctx.cache_root / "fresh" / (std::to_string(now_ns()) + "-" + std::to_string(::getpid()));
        out.fresh_root = false;
    }
    return out;
}

void write_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp-" + std::to_string(::getpid());
    write_text_file(tmp, content);
    fs::rename(tmp, path);
}

nlohmann::ordered_json overrides_json(const OverrideSet& ov) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [path, raw] : ov.entries) j[path] = raw;
    return j;
}

nlohmann::ordered_json run_json(const SweepRun& r) {
    nlohmann::ordered_json j;
    j["index"] = r.index;
    j["overrides"] = overrides_json(r.overrides);
    j["status"] = r.status;
    if (!r.error.empty()) j["error"] = r.error;
    j["metrics"] = r.metrics;
    if (!r.metrics_path.empty()) j["metrics_path"] = r.metrics_path.string();
    return j;
}

SweepRun run_from_json(const nlohmann::json& j, const OverrideSet& ov) {
    SweepRun r;
    r.index = j.at("index").get<std::size_t>();
    r.overrides = ov;
    r.status = j.at("status").get<std::string>();
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
    r.metrics = j.at("metrics").get<std::map<std::string, double>>();
    if (j.contains("metrics_path")) r.metrics_path = j.at("metrics_path").get<std::string>();
    return r;
}

enum class Claim { Acquired, Busy };

// O_EXCL create; a claim whose owner pid is gone is removed and retried.
Claim try_claim(const fs::path& path) {
    for (int attempt = 0; attempt < 2; ++attempt) {
        const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            const std::string pid = std::to_string(::getpid()) + "\n";
            const ssize_t n = ::write(fd, pid.data(), pid.size());
            ::close(fd);
            if (n != static_cast<ssize_t>(pid.size())) throw PipelineError("cannot write claim " + path.string());
            return Claim::Acquired;
        }
        if (errno != EEXIST) throw PipelineError("cannot create claim " + path.string() + ": " + std::strerror(errno));
        std::ifstream in(path);
        long owner = 0;
        if (!(in >> owner)) return Claim::Busy;  // owner is still writing its pid
        if (owner == ::getpid() || ::kill(static_cast<pid_t>(owner), 0) == 0 || errno != ESRCH) return Claim::Busy;
        std::error_code ec;
        fs::remove(path, ec);
    }
    return Claim::Busy;
}

SweepRun execute_run(const ConfigTree& base, std::size_t index, const OverrideSet& ov, const RunContext& ctx) {
    SweepRun r;
    r.index = index;
    r.overrides = ov;
    try {
        const auto res = run_pipeline(apply_overrides(base, ov), ctx);
        r.status = "ok";
        r.metrics = res.final_metrics;
        r.metrics_path = res.metrics_path;
    } catch (const std::exception& e) {
        r.status = "failed";
        r.error = e.what();
    }
    return r;
}

}  // namespace

SweepSpec parse_sweep_spec(const ConfigNode& doc) {
    if (!doc.is_map()) throw ConfigError("sweep file must be a mapping");
    SweepSpec spec;
    if (const auto* m = doc.find("method")) spec.method = m->as_string();
    if (spec.method != "grid") throw ConfigError("unsupported sweep method '" + spec.method + "' (only grid)");
    const auto* params = doc.find("parameters");
    if (!params || !params->is_map() || params->as_map().empty())
        throw ConfigError("sweep file needs a non-empty 'parameters' mapping");
    for (const auto& [path, body] : params->as_map()) {
        const ConfigNode* values = body.is_map() ? body.find("values") : &body;
        if (!values || !values->is_list()) throw ConfigError("sweep parameter '" + path + "' needs a 'values' list");
        if (values->as_list().empty()) throw ConfigError("sweep parameter '" + path + "' has an empty value list");
        for (const auto& v : values->as_list())
            if (!v.is_scalar()) throw ConfigError("sweep parameter '" + path + "' values must be scalars");
        spec.parameters[path] = values->as_list();
    }
    return spec;
}

SweepSpec load_sweep_spec(const fs::path& path) { return parse_sweep_spec(parse_yaml_file(path, true)); }

std::vector<OverrideSet> expand_grid(const SweepSpec& spec) {
    if (spec.parameters.empty()) throw ConfigError("sweep has no parameters");
    for (const auto& [path, values] : spec.parameters)
        if (values.empty()) throw ConfigError("sweep parameter '" + path + "' has an empty value list");
    std::vector<OverrideSet> out(1);
    for (const auto& [path, values] : spec.parameters) {
        std::vector<OverrideSet> next;
        next.reserve(out.size() * values.size());
        for (const auto& prefix : out)
            for (const auto& v : values) {
                OverrideSet s = prefix;
                s.add(path, render_scalar(v));
                next.push_back(std::move(s));
            }
        out = std::move(next);
    }
    return out;
}

SweepReport run_sweep(const ConfigTree& base, const SweepSpec& spec, const RunContext& ctx_in) {
    const RunContext ctx = pin_root(ctx_in);
    const auto grid = expand_grid(spec);

    ConfigMap spec_doc;
    for (const auto& [path, values] : spec.parameters) spec_doc[path] = ConfigNode(values);
    const std::string id =
        sha256_hex(canonicalize_args(base.root) + '\0' + canonicalize_args(ConfigNode(spec_doc))).substr(0, 16);
    const fs::path dir = ctx.cache_root / "sweeps" / id;
    fs::create_directories(dir);
    note(ctx, "sweep " + id + ": " + std::to_string(grid.size()) + " runs");

    auto result_path = [&](std::size_t i) { return dir / ("run_" + std::to_string(i) + ".json"); };
    auto claim_path = [&](std::size_t i) { return dir / ("run_" + std::to_string(i) + ".claim"); };

    std::vector<std::optional<SweepRun>> runs(grid.size());
    auto attempt = [&](std::size_t i) {
        if (try_claim(claim_path(i)) != Claim::Acquired) return false;
        std::error_code ec;
        if (fs::exists(result_path(i))) {
            // Finished earlier (by this or another process); failed runs are retried.
            auto prior = run_from_json(nlohmann::json::parse(read_text_file(result_path(i))), grid[i]);
            if (prior.status == "ok") {
                fs::remove(claim_path(i), ec);
                runs[i] = std::move(prior);
                return true;
            }
        }
        note(ctx, "sweep run " + std::to_string(i + 1) + "/" + std::to_string(grid.size()));
        SweepRun r = execute_run(base, i, grid[i], ctx);
        if (r.status != "ok") note(ctx, "  run failed: " + r.error);
        write_atomic(result_path(i), run_json(r).dump() + "\n");
        fs::remove(claim_path(i), ec);
        runs[i] = std::move(r);
        return true;
    };

    for (std::size_t i = 0; i < grid.size(); ++i) attempt(i);

    // Runs claimed by other processes: wait for their results, or take over
    // when the owner disappears.
    for (;;) {
        bool pending = false;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (runs[i]) continue;
            if (!fs::exists(claim_path(i)) && fs::exists(result_path(i))) {
                runs[i] = run_from_json(nlohmann::json::parse(read_text_file(result_path(i))), grid[i]);
                continue;
            }
            if (!attempt(i)) pending = true;
        }
        if (!pending) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
    }

    SweepReport report;
    report.report_path = dir / "sweep_report.jsonl";
    std::string lines;
    for (auto& r : runs) {
        lines += run_json(*r).dump() + "\n";
        report.runs.push_back(std::move(*r));
    }
    write_atomic(report.report_path, lines);
    return report;
}

std::vector<MetricAggregate> aggregate_metrics(const std::vector<std::map<std::string, double>>& runs) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& run : runs)
        for (const auto& [name, v] : run) values[name].push_back(v);
    std::vector<MetricAggregate> out;
    for (const auto& [name, vs] : values) {
        MetricAggregate a;
        a.metric = name;
        const double n = static_cast<double>(vs.size());
        // Shifted by the first value so identical runs give exactly zero spread.
        const double shift = vs.front();
        double sum = 0.0, sq = 0.0;
        for (double v : vs) sum += v - shift;
        const double offset = sum / n;
        a.mean = shift + offset;
        for (double v : vs) sq += (v - shift - offset) * (v - shift - offset);
        a.std = std::sqrt(sq / n);
        if (a.mean != 0.0) a.std_rel = 100.0 * a.std / std::abs(a.mean);
        out.push_back(std::move(a));
    }
    return out;
}

InstabilityResult run_n_times(const ConfigTree& cfg, const RunContext& ctx_in, int iterations, Stage restart_from,
                              const std::string& seed_key) {
    if (iterations < 2) throw ConfigError("run_n_times needs at least 2 iterations");
    if (stage_index(restart_from) <= stage_index(Stage::Featurization))
        note(ctx_in, "warning: restarting from " + std::string(stage_name(restart_from)) +
                         " re-derives embeddings on every iteration");
    RunContext ctx = pin_root(ctx_in);
    ctx.restart_from = restart_from;
    const std::int64_t base_seed = cfg.get_int(seed_key);

    InstabilityResult res;
    for (int i = 0; i < iterations; ++i) {
        note(ctx, "iteration " + std::to_string(i + 1) + "/" + std::to_string(iterations) + " (" + seed_key + "=" +
                      std::to_string(base_seed + i) + ")");
        OverrideSet ov;
        ov.add(seed_key, std::to_string(base_seed + i));
        res.runs.push_back(run_pipeline(apply_overrides(cfg, ov), ctx).final_metrics);
    }
    res.aggregates = aggregate_metrics(res.runs);

    const std::string id = sha256_hex(canonicalize_args(cfg.root) + '\0' + std::to_string(iterations) + '\0' +
                                      std::string(stage_name(restart_from)) + '\0' + seed_key)
                               .substr(0, 16);
    const fs::path dir = ctx.cache_root / "instability";
    fs::create_directories(dir);
    res.report_path = dir / ("run_n_times-" + id + ".jsonl");
    std::string lines;
    for (const auto& a : res.aggregates) {
        nlohmann::ordered_json j;
        j["metric"] = a.metric;
        j["mean"] = a.mean;
        j["std"] = a.std;
        j["std_rel"] = a.std_rel ? nlohmann::ordered_json(*a.std_rel) : nlohmann::ordered_json(nullptr);
        lines += j.dump() + "\n";
    }
    write_atomic(res.report_path, lines);
    return res;
}

fs::path tuned_overlay_path(const std::string& system, const std::string& dataset, const fs::path& config_dir) {
    return config_dir / "tuned" / system / (dataset + ".yml");
}

ConfigNode resolve_tuned(const std::string& system, const std::string& dataset, const fs::path& config_dir) {
    const fs::path p = tuned_overlay_path(system, dataset, config_dir);
    if (!fs::exists(p)) throw ConfigError("no tuned configuration for " + system + " on " + dataset + " (expected " + p.string() + ")");
    ConfigNode overlay = parse_yaml_file(p);
    if (!overlay.is_map()) throw ConfigError("tuned configuration " + p.string() + " must be a mapping");
    overlay.as_map().erase(std::string(kIncludeKey));
    return overlay;
}

ConfigTree apply_tuned(const ConfigTree& base, const std::string& system, const std::string& dataset,
                       const fs::path& config_dir) {
    ConfigTree out = base;
    out.root = deep_merge(base.root, resolve_tuned(system, dataset, config_dir));
    out.source_chain.push_back(tuned_overlay_path(system, dataset, config_dir));
    return out;
}

}  // namespace pidskit

// Command-line entry point: `pidskit run <system> <dataset> [flags] [--a.b=value ...]`
// and `pidskit generate --out DIR`.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pidskit/cache.hpp"
#include "pidskit/config.hpp"
#include "pidskit/errors.hpp"
#include "pidskit/experiments.hpp"
#include "pidskit/ingest.hpp"
#include "pidskit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pidskit;

namespace {

std::string env_or(const char* name, const char* fallback) {
    const char* v = std::getenv(name);
    return v && *v ? v : fallback;
}

struct RunArgs {
    std::string system;
    std::string dataset;
    bool tuned = false;
    std::string experiment;
    std::string tuning_mode;
    std::string tuning_file;
    std::string force_restart;
    bool restart_from_scratch = false;
    bool cpu = false;
    std::string exp_name;
    std::string project;
};

int run_command(const RunArgs& a, const std::vector<std::string>& extras) {
    const fs::path config_dir = env_or("PIDSKIT_CONFIG", "config");
    RunContext ctx;
    ctx.data_dir = env_or("PIDSKIT_DATA", "data");
    ctx.cache_root = env_or("PIDSKIT_CACHE", "artifacts");
    ctx.log = &std::cerr;
    ctx.fresh_root = a.restart_from_scratch;
    if (!a.force_restart.empty()) ctx.restart_from = parse_stage(a.force_restart);

    if (!fs::exists(config_dir / (a.system + ".yml")))
        throw ConfigError("unknown system '" + a.system + "' (no " + (config_dir / (a.system + ".yml")).string() + ")");
    if (!dataset_available(ctx, a.dataset)) throw ConfigError("unknown dataset '" + a.dataset + "'");

    // Base YAML, then tuned overlay, then experiment file, then command-line overrides.
    ConfigTree cfg = load_system_config(a.system, config_dir);
    if (a.tuned) cfg = apply_tuned(cfg, a.system, a.dataset, config_dir);
    if (!a.experiment.empty() && a.experiment != "none") {
        if (a.experiment != "run_n_times") throw ConfigError("unknown experiment '" + a.experiment + "'");
        const fs::path p = config_dir / "experiments" / (a.experiment + ".yml");
        if (!fs::exists(p)) throw ConfigError("missing experiment file " + p.string());
        cfg.root = deep_merge(cfg.root, parse_yaml_file(p));
        cfg.source_chain.push_back(p);
    }
    cfg = apply_overrides(cfg, parse_override_args(extras));
    cfg = bind_dataset(cfg, ctx, a.dataset);

    const auto violations = validate_config(cfg, default_schema());
    if (!violations.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& v : violations) msg += "\n  " + v.path + ": " + v.reason;
        throw ConfigError(msg);
    }

    if (!a.tuning_mode.empty()) {
        if (a.tuning_mode != "hyperparameters")
            throw ConfigError("unknown tuning mode '" + a.tuning_mode + "' (expected hyperparameters)");
        fs::path file = a.tuning_file;
        if (file.empty()) file = config_dir / "tuning" / ("tuning_" + a.system + ".yml");
        if (!fs::exists(file)) throw ConfigError("tuning file not found: " + file.string());
        const auto report = run_sweep(cfg, load_sweep_spec(file), ctx);
        std::size_t failed = 0;
        for (const auto& r : report.runs) failed += r.status != "ok";
        std::cout << "sweep report: " << report.report_path.string() << "\n"
                  << "runs: " << report.runs.size() << " (" << failed << " failed)\n";
        return 0;
    }

    if (a.experiment == "run_n_times") {
        const int iterations = static_cast<int>(cfg.get_int_or("experiment.uncertainty.deep_ensemble.iterations", 5));
        const Stage restart =
            parse_stage(cfg.get_string_or("experiment.uncertainty.deep_ensemble.restart_from", "training"));
        const auto res = run_n_times(cfg, ctx, iterations, restart);
        for (const auto& agg : res.aggregates) {
            std::cout << agg.metric << " mean=" << agg.mean << " std=" << agg.std
                      << " std_rel=" << (agg.std_rel ? std::to_string(*agg.std_rel) : std::string("n/a")) << "\n";
        }
        std::cout << "instability report: " << res.report_path.string() << "\n";
        return 0;
    }

    const auto res = run_pipeline(cfg, ctx);
    for (const auto& [name, v] : res.final_metrics) std::cout << name << " = " << v << "\n";
    std::cout << "run log: " << res.run_log.string() << "\n"
              << "metrics: " << res.metrics_path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Provenance-graph intrusion detection pipelines"};
    app.require_subcommand(1);

    RunArgs ra;
    auto* run = app.add_subcommand("run", "run a system configuration on a dataset");
    run->allow_extras();
    run->add_option("system", ra.system, "configuration name under the config directory")->required();
    run->add_option("dataset", ra.dataset, "dataset id")->required();
    run->add_flag("--tuned", ra.tuned, "merge config/tuned/<system>/<dataset>.yml");
    run->add_option("--experiment", ra.experiment, "experiment name (run_n_times)");
    run->add_option("--tuning_mode", ra.tuning_mode, "hyperparameters");
    run->add_option("--tuning_file,--tuning_file_path", ra.tuning_file, "sweep file");
    run->add_option("--force_restart", ra.force_restart, "re-execute from this stage onward");
    run->add_flag("--restart_from_scratch", ra.restart_from_scratch, "use a new timestamped cache root");
    run->add_flag("--cpu", ra.cpu, "accepted for compatibility; always CPU");
    run->add_option("--exp", ra.exp_name, "accepted and ignored");
    run->add_option("--project", ra.project, "accepted and ignored");

    SyntheticParams sp;
    std::string out_dir;
    auto* gen = app.add_subcommand("generate", "write a synthetic dataset (events.jsonl, labels.csv)");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", sp.seed, "generator seed");
    gen->add_option("--benign", sp.n_benign_events, "benign events");
    gen->add_option("--attacks", sp.n_attack_chains, "attack chains");
    gen->add_option("--hours", sp.span_hours, "time span in hours");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            write_synthetic(sp, out_dir);
            std::cout << "wrote " << (fs::path(out_dir) / "events.jsonl").string() << "\n";
            return 0;
        }
        return run_command(ra, run->remaining());
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const PipelineError& e) {
        std::cerr << "pipeline error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

#include "pidskit/pipeline.hpp"

#include <unistd.h>

#include <charconv>
#include <chrono>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "pidskit/batching.hpp"
#include "pidskit/errors.hpp"
#include "pidskit/evaluate.hpp"
#include "pidskit/featurize.hpp"
#include "pidskit/ingest.hpp"
#include "pidskit/io.hpp"
#include "pidskit/model.hpp"
#include "pidskit/transform.hpp"
#include "pidskit/triage.hpp"

namespace fs = std::filesystem;

namespace pidskit {

namespace {

const char* const kSplits[] = {"train", "val", "test"};

void note(const RunContext& ctx, const std::string& msg) {
    if (ctx.log) *ctx.log << msg << '\n';
}

std::string shortest(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

using Dirs = std::vector<fs::path>;  // final directory of every stage, by stage index

fs::path dir_of(const Dirs& d, Stage s) { return d[stage_index(s)]; }

// ---- construction ----

void run_construction(const ConfigTree& cfg, const Dirs&, const fs::path& out, const RunContext& ctx) {
    const std::string dataset = cfg.get_string("dataset");
    const fs::path dir = dataset_dir(ctx, dataset);
    auto parsed = parse_events_file(dir / "events.jsonl");
    note(ctx, "  parsed " + std::to_string(parsed.parsed) + " events (" + std::to_string(parsed.skipped) + " malformed)");

    GroundTruth gt;
    gt.dataset_id = dataset;
    if (fs::exists(dir / "labels.csv")) gt = load_ground_truth(dir / "labels.csv", dataset);
    else note(ctx, "  warning: no labels.csv; every node counts as benign");

    auto windows = build_windows(std::move(parsed.events), static_cast<int>(cfg.get_int("construction.time_window_size")));
    const auto [train_end, val_end] = split_boundaries(windows, cfg.get_double("construction.train_end_frac"),
                                                       cfg.get_double("construction.val_end_frac"));
    const std::size_t n_windows = windows.size();
    auto split = split_dataset(std::move(windows), gt, train_end, val_end);
    write_graphs(out / "train.bin", split.train);
    write_graphs(out / "val.bin", split.val);
    write_graphs(out / "test.bin", split.test);

    std::ostringstream labels;
    for (const auto& [id, attack] : gt.malicious) labels << id << ',' << attack << '\n';
    write_text_file(out / "labels.csv", labels.str());

    nlohmann::ordered_json j;
    j["events"] = parsed.parsed;
    j["malformed"] = parsed.skipped;
    j["windows"] = n_windows;
    j["train_windows"] = split.train.size();
    j["val_windows"] = split.val.size();
    j["test_windows"] = split.test.size();
    j["train_end"] = train_end;
    j["val_end"] = val_end;
    write_text_file(out / "summary.json", j.dump(2) + "\n");
}

// ---- transformation ----

void run_transformation(const ConfigTree& cfg, const Dirs& dirs, const fs::path& out, const RunContext&) {
    const auto methods = cfg.get_list("transformation.used_methods");
    for (const char* s : kSplits) {
        auto graphs = read_graphs(dir_of(dirs, Stage::Construction) / (std::string(s) + ".bin"));
        for (auto& g : graphs) g = apply_transforms(g, methods);
        write_graphs(out / (std::string(s) + ".bin"), graphs);
    }
}

// ---- featurization ----

struct FeatureSetup {
    EmbedMethod method = EmbedMethod::Hash;
    int dim = 0;
    std::unique_ptr<EmbeddingTable> table;
    FeatureSpec spec;

    NodeFeaturizer featurizer() const { return NodeFeaturizer(method, table.get(), dim, spec); }
};

FeatureSetup load_features(const ConfigTree& cfg, const Dirs& dirs) {
    FeatureSetup f;
    f.dim = static_cast<int>(cfg.get_int("featurization.emb_dim"));
    f.spec = feature_spec_from_config(cfg);
    if (cfg.get_string("featurization.used_method") != "hfh") {
        f.method = EmbedMethod::Skipgram;
        f.table = std::make_unique<EmbeddingTable>(
            EmbeddingTable::read(dir_of(dirs, Stage::Featurization) / "embeddings.bin"));
    }
    return f;
}

void run_featurization(const ConfigTree& cfg, const Dirs& dirs, const fs::path& out, const RunContext& ctx) {
    const std::string method = cfg.get_string("featurization.used_method");
    const int dim = static_cast<int>(cfg.get_int("featurization.emb_dim"));
    nlohmann::ordered_json j;
    j["method"] = method;
    j["emb_dim"] = dim;
    if (method == "hfh") {
        if (dim % 4 != 0) throw ConfigError("featurization.emb_dim must be divisible by 4 for hfh");
        write_text_file(out / "featurization.json", j.dump(2) + "\n");
        return;
    }
    // Vocabulary from the train split only.
    const auto train = read_graphs(dir_of(dirs, Stage::Transformation) / "train.bin");
    const std::string sub = "featurization." + method + ".";
    const auto corpus = build_corpus(entity_sentences(train, feature_spec_from_config(cfg)),
                                     static_cast<int>(cfg.get_int(sub + "min_count")));
    SkipgramParams p;
    p.dim = dim;
    p.epochs = static_cast<int>(cfg.get_int("featurization.epochs"));
    p.alpha = cfg.get_double(sub + "alpha");
    p.window = static_cast<int>(cfg.get_int(sub + "window_size"));
    p.negative = static_cast<int>(cfg.get_int(sub + "negative"));
    p.seed = static_cast<std::uint64_t>(cfg.get_int("featurization.seed"));
    note(ctx, "  skip-gram over " + std::to_string(corpus.sentences.size()) + " sentences, vocab " +
                  std::to_string(corpus.tokens.size()));
    const auto table = train_skipgram(corpus, p);
    table.write(out / "embeddings.bin");
    j["vocab"] = table.tokens.size();
    j["epoch_loss"] = table.epoch_loss;
    write_text_file(out / "featurization.json", j.dump(2) + "\n");
}

// ---- batching ----

void run_batching(const ConfigTree& cfg, const Dirs& dirs, const fs::path& out, const RunContext&) {
    const auto plan = batching_plan_from_config(cfg);
    std::vector<std::vector<Batch>> per_split;
    for (const char* s : kSplits) {
        const auto windows = read_graphs(dir_of(dirs, Stage::Transformation) / (std::string(s) + ".bin"));
        per_split.push_back(make_batches(windows, plan));
        write_batches(out / (std::string(s) + "_batches.bin"), per_split.back());
    }
    if (plan.last_neighbor_k > 0) {
        // One pass over the whole stream so later splits see earlier history.
        std::vector<const ProvGraph*> all;
        for (const auto& split : per_split)
            for (const auto& b : split) all.push_back(&b.graph);
        const auto snaps = build_neighbor_index(all, plan.last_neighbor_k);
        std::size_t at = 0;
        for (std::size_t i = 0; i < per_split.size(); ++i) {
            std::vector<NeighborSnapshot> part(snaps.begin() + static_cast<std::ptrdiff_t>(at),
                                               snaps.begin() + static_cast<std::ptrdiff_t>(at + per_split[i].size()));
            at += per_split[i].size();
            write_snapshots(out / (std::string(kSplits[i]) + "_neighbors.bin"), part);
        }
    }
}

std::vector<Batch> load_batches(const Dirs& dirs, const std::string& split, bool use_context, const RunContext& ctx) {
    const fs::path dir = dir_of(dirs, Stage::Batching);
    auto batches = read_batches(dir / (split + "_batches.bin"));
    if (!use_context) return batches;
    const fs::path nb = dir / (split + "_neighbors.bin");
    if (!fs::exists(nb)) {
        note(ctx, "  warning: tgn encoder without tgn_last_neighbor batching; no context injected");
        return batches;
    }
    const auto snaps = read_snapshots(nb);
    if (snaps.size() != batches.size()) throw DataError("neighbor snapshots do not match batches");
    for (std::size_t i = 0; i < batches.size(); ++i) inject_context(batches[i], snaps[i]);
    return batches;
}

// ---- training ----

fs::path checkpoint_path(const fs::path& dir, int epoch) {
    return dir / ("checkpoint_epoch_" + std::to_string(epoch) + ".bin");
}

void run_training(const ConfigTree& cfg, const Dirs& dirs, const fs::path& out, const RunContext& ctx) {
    const auto mc = model_config_from(cfg);
    const auto feats = load_features(cfg, dirs);
    auto featurizer = feats.featurizer();
    TrainData data{load_batches(dirs, "train", mc.use_context, ctx), load_batches(dirs, "val", mc.use_context, ctx)};
    std::string log;
    train(data, mc, featurizer, [&](const Checkpoint& c) {
        c.write(checkpoint_path(out, c.epoch));
        nlohmann::ordered_json j;
        j["epoch"] = c.epoch;
        j["train_loss"] = c.train_loss;
        j["val_loss"] = c.val_loss;
        log += j.dump() + "\n";
        note(ctx, "  epoch " + std::to_string(c.epoch) + " train_loss " + shortest(c.train_loss) + " val_loss " +
                      shortest(c.val_loss));
    });
    write_text_file(out / "training_log.jsonl", log);
}

// ---- evaluation ----

GroundTruth load_labels(const Dirs& dirs, const std::string& dataset) {
    return load_ground_truth(dir_of(dirs, Stage::Construction) / "labels.csv", dataset);
}

void write_scores(const fs::path& path, const ScoreMap& scores) {
    std::string s = "node_id,score\n";
    for (const auto& [id, v] : scores) s += id + "," + shortest(v) + "\n";
    write_text_file(path, s);
}

ScoreMap read_scores(const fs::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    std::getline(in, line);
    ScoreMap out;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        double v = 0.0;
        std::from_chars(line.data() + comma + 1, line.data() + line.size(), v);
        out.emplace(line.substr(0, comma), v);
    }
    return out;
}

void run_evaluation(const ConfigTree& cfg, const Dirs& dirs, const fs::path& out, const RunContext& ctx) {
    const auto mc = model_config_from(cfg);
    const auto feats = load_features(cfg, dirs);
    auto featurizer = feats.featurizer();
    const auto gt = load_labels(dirs, cfg.get_string("dataset"));
    const auto val = load_batches(dirs, "val", mc.use_context, ctx);
    const auto test = load_batches(dirs, "test", mc.use_context, ctx);

    const std::string method = cfg.get_string("evaluation.node_evaluation.threshold_method");
    const Reduce reduce = cfg.get_string("evaluation.node_evaluation.score_reduce") == "mean" ? Reduce::Mean : Reduce::Max;
    const auto top_k = static_cast<std::size_t>(cfg.get_int("evaluation.node_evaluation.top_k"));
    if (cfg.get_bool_or("evaluation.node_evaluation.use_kmeans", false))
        note(ctx, "  warning: evaluation.node_evaluation.use_kmeans is accepted and ignored; use threshold_method: kmeans");

    std::string metrics;
    double threshold = 0.0;
    int epoch = 0;
    for (int e = 1; e <= mc.epochs; ++e) {
        auto ck = Checkpoint::read(checkpoint_path(dir_of(dirs, Stage::Training), e));
        auto scores = score_nodes(ck.params, mc, test, featurizer, reduce);
        if (method == "max_val_loss") {
            threshold = threshold_max_val(score_nodes(ck.params, mc, val, featurizer, reduce));
        } else if (method == "fixed") {
            threshold = threshold_fixed(cfg.get_double("evaluation.node_evaluation.fixed_threshold"));
        } else {
            std::vector<double> v;
            for (const auto& [id, s] : scores) v.push_back(s);
            threshold = threshold_kmeans(v, static_cast<int>(cfg.get_int("evaluation.node_evaluation.kmeans_iters")));
        }
        const auto report = make_report(std::move(scores), gt, threshold, e);
        const auto m = compute_metrics(report);
        metrics += metrics_jsonl(e, m);

        const fs::path edir = out / ("epoch_" + std::to_string(e));
        fs::create_directories(edir);
        write_scores(edir / "scores.csv", report.scores);
        export_plot_data(report, edir, top_k);
        epoch = e;
        note(ctx, "  epoch " + std::to_string(e) + " threshold " + shortest(threshold) + " tp " + std::to_string(m.tp) +
                      " fp " + std::to_string(m.fp) +
                      (m.auc_roc ? " auc " + shortest(*m.auc_roc) : std::string()));
    }
    write_text_file(out / "metrics.jsonl", metrics);
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["threshold"] = threshold;
    j["threshold_method"] = method;
    write_text_file(out / "final.json", j.dump(2) + "\n");
}

// ---- triage ----

void run_triage(const ConfigTree& cfg, const Dirs& dirs, const fs::path& out, const RunContext& ctx) {
    const std::string method = cfg.get_string("triage.used_method");
    if (cfg.get_bool_or("triage.use_kmeans", false)) note(ctx, "  warning: triage.use_kmeans is accepted and ignored");
    if (method == "none") {
        write_triage(TriageResult{}, out / "triage.csv");
        return;
    }
    if (method == "depimpact") note(ctx, "  warning: depimpact triage is not implemented; ranking by score");
    const fs::path eval = dir_of(dirs, Stage::Evaluation);
    const auto final_info = nlohmann::json::parse(read_text_file(eval / "final.json"));
    const int epoch = final_info.at("epoch").get<int>();
    auto report = make_report(read_scores(eval / ("epoch_" + std::to_string(epoch)) / "scores.csv"),
                              load_labels(dirs, cfg.get_string("dataset")), final_info.at("threshold").get<double>(),
                              epoch);
    write_triage(triage_by_score(report), out / "triage.csv");
}

using StageFn = void (*)(const ConfigTree&, const Dirs&, const fs::path&, const RunContext&);
constexpr StageFn kStageFns[] = {run_construction, run_transformation, run_featurization, run_batching,
                                 run_training,     run_evaluation,     run_triage};

}  // namespace

fs::path dataset_dir(const RunContext& ctx, const std::string& dataset) { return ctx.data_dir / dataset; }

bool dataset_available(const RunContext& ctx, const std::string& dataset) {
    return is_known_dataset(dataset) || fs::is_directory(dataset_dir(ctx, dataset));
}

ConfigTree bind_dataset(const ConfigTree& cfg, const RunContext& ctx, const std::string& dataset) {
    if (!dataset_available(ctx, dataset)) throw ConfigError("unknown dataset: " + dataset);
    const fs::path dir = dataset_dir(ctx, dataset);
    if (!fs::exists(dir / "events.jsonl"))
        throw DataError("dataset " + dataset + ": missing " + (dir / "events.jsonl").string());
    std::string bytes = read_text_file(dir / "events.jsonl");
    bytes.push_back('\0');
    if (fs::exists(dir / "labels.csv")) bytes += read_text_file(dir / "labels.csv");
    ConfigTree out = cfg;
    out.root.as_map()["dataset"] = ConfigNode(dataset);
    out.root.as_map()["dataset_fingerprint"] = ConfigNode(sha256_hex(bytes));
    return out;
}

RunResult run_pipeline(const ConfigTree& cfg, const RunContext& ctx) {
    const auto violations = validate_config(cfg, default_schema());
    if (!violations.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& v : violations) msg += "\n  " + v.path + ": " + v.reason;
        throw ConfigError(msg);
    }
    if (!cfg.find("dataset")) throw ConfigError("configuration is not bound to a dataset");

    RunResult res;
    res.plan = plan_pipeline(cfg, PlanOptions{ctx.cache_root, ctx.restart_from, ctx.fresh_root});
    const std::string snapshot = canonicalize_args(cfg.root);

    Dirs dirs;
    for (const auto& ps : res.plan.stages) dirs.push_back(stage_dir(res.plan.root, ps.key));

    std::string log;
    for (std::size_t i = 0; i < res.plan.stages.size(); ++i) {
        const auto& ps = res.plan.stages[i];
        const auto t0 = std::chrono::steady_clock::now();
        StageRecord rec{ps.key.stage, ps.decision.hit(), dirs[i], 0.0};
        note(ctx, std::string(stage_name(ps.key.stage)) + (rec.hit ? ": hit " : ": miss ") + ps.key.args_digest.substr(0, 16));
        if (!rec.hit) {
            if (ps.decision.corrupted_marker) note(ctx, "  warning: corrupted completion marker; re-executing");
            const fs::path scratch = begin_stage_output(ps.key, res.plan.root);
            try {
                kStageFns[i](cfg, dirs, scratch, ctx);
            } catch (...) {
                std::error_code ec;
                fs::remove_all(scratch, ec);
                throw;
            }
            if (commit_stage(ps.key, res.plan.root, scratch, snapshot, ps.decision.replace) == CommitOutcome::LostRace)
                note(ctx, "  another process committed this stage first; using its output");
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        nlohmann::ordered_json j;
        j["stage"] = std::string(stage_name(rec.stage));
        j["decision"] = rec.hit ? "hit" : "miss";
        j["digest"] = ps.key.args_digest;
        j["seconds"] = rec.seconds;
        log += j.dump() + "\n";
        res.records.push_back(std::move(rec));
    }

    const fs::path logs = res.plan.root / "logs";
    fs::create_directories(logs);
    res.run_log = logs / ("run-" + std::to_string(now_ns()) + "-" + std::to_string(::getpid()) + ".jsonl");
    write_text_file(res.run_log, log);
    res.metrics_path = dir_of(dirs, Stage::Evaluation) / "metrics.jsonl";
    res.final_metrics = read_final_metrics(res.metrics_path, &res.final_epoch);
    return res;
}

std::map<std::string, double> read_final_metrics(const fs::path& metrics_jsonl, int* epoch) {
    std::istringstream in(read_text_file(metrics_jsonl));
    std::string line;
    int last = -1;
    std::map<std::string, double> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const int e = j.at("epoch").get<int>();
        if (e > last) {
            last = e;
            out.clear();
        }
        if (e == last) out[j.at("metric").get<std::string>()] = j.at("value").get<double>();
    }
    if (epoch) *epoch = last;
    return out;
}

void write_graphs(const fs::path& path, const std::vector<ProvGraph>& graphs) {
    BinaryWriter w(path);
    w.magic("PGLS");
    w.u64(graphs.size());
    for (const auto& g : graphs) g.write(w);
    w.close();
}

std::vector<ProvGraph> read_graphs(const fs::path& path) {
    BinaryReader r(path);
    r.expect_magic("PGLS");
    std::vector<ProvGraph> out;
    const auto n = r.u64();
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(ProvGraph::read(r));
    return out;
}

}  // namespace pidskit

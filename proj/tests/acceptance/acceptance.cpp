// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and budgets
// are pinned below; the exit status is non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pidskit/batching.hpp"
#include "pidskit/evaluate.hpp"
#include "pidskit/experiments.hpp"
#include "pidskit/ingest.hpp"
#include "pidskit/model.hpp"
#include "pidskit/pipeline.hpp"
#include "pidskit/rng.hpp"
#include "pidskit/transform.hpp"
#include "support/oracles.hpp"
#include "support/testkit.hpp"

using namespace pidskit;
using testkit::TempDir;
namespace fs = std::filesystem;

namespace {

constexpr double kLrRerunBudgetS = 10.0;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradBudgetS = 60.0;
constexpr double kAucHalfTol = 0.05;
constexpr int kAucSamples = 10'000;
constexpr int kBatchingDatasets = 100;
constexpr int kDagGraphs = 1000;
constexpr double kTopFraction = 0.01;
constexpr int kDetectionSeeds = 5;
constexpr int kDetectionSeedsNeeded = 4;
constexpr double kPipelineBudgetS = 300.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

// Small synthetic dataset under <root>/data/SYN.
RunContext small_workspace(const TempDir& d, const std::string& cache = "cache") {
    write_synthetic(testkit::small_synthetic(), d / "data/SYN");
    RunContext ctx;
    ctx.data_dir = d / "data";
    ctx.cache_root = d / cache;
    return ctx;
}

ConfigTree velox(const RunContext& ctx, const std::string& dataset,
                 const std::vector<std::pair<std::string, std::string>>& ov = {}) {
    ConfigTree cfg = load_system_config("velox", testkit::config_dir());
    OverrideSet o;
    for (const auto& [k, v] : ov) o.add(k, v);
    return bind_dataset(apply_overrides(cfg, o), ctx, dataset);
}

Outcome cache_chain() {
    TempDir d;
    const RunContext ctx = small_workspace(d);
    const auto cold = run_pipeline(velox(ctx, "SYN"), ctx);
    const auto t0 = Clock::now();
    const auto rerun = run_pipeline(velox(ctx, "SYN", {{"training.lr", "0.02"}}), ctx);
    const double s = seconds_since(t0);
    std::string executed;
    bool exact = true;
    for (const auto& rec : rerun.records) {
        const bool expect_run = stage_index(rec.stage) >= stage_index(Stage::Training);
        exact &= rec.hit != expect_run;
        if (!rec.hit) executed += (executed.empty() ? "" : ",") + std::string(stage_name(rec.stage));
    }
    bool cold_all = true;
    for (const auto& rec : cold.records) cold_all &= !rec.hit;
    return {exact && cold_all && s < kLrRerunBudgetS,
            "re-executed {" + executed + "} in " + fmt(s) + " s (budget " + fmt(kLrRerunBudgetS) + " s)"};
}

Outcome config_defaults() {
    const auto dir = testkit::config_dir();
    const auto o = load_system_config("orthrus", dir);
    const auto rn = parse_yaml_file(dir / "experiments" / "run_n_times.yml");
    struct Want {
        std::string what;
        double got;
        double want;
    };
    const std::vector<Want> checks = {
        {"featurization.emb_dim", static_cast<double>(o.get_int("featurization.emb_dim")), 128},
        {"featurization.epochs", static_cast<double>(o.get_int("featurization.epochs")), 50},
        {"featurization.word2vec.alpha", o.get_double("featurization.word2vec.alpha"), 0.025},
        {"training.node_hid_dim", static_cast<double>(o.get_int("training.node_hid_dim")), 128},
        {"training.lr", o.get_double("training.lr"), 0.00001},
        {"construction.time_window_size", static_cast<double>(o.get_int("construction.time_window_size")), 15},
        {"run_n_times iterations", static_cast<double>(rn.find("experiment.uncertainty.deep_ensemble.iterations")->as_int()), 5},
    };
    std::string bad;
    for (const auto& c : checks)
        if (c.got != c.want) bad += " " + c.what + "=" + fmt(c.got, 10) + " (want " + fmt(c.want, 10) + ")";
    return {bad.empty(), bad.empty() ? std::to_string(checks.size()) + " values match exactly" : "mismatch:" + bad};
}

Outcome grid_expansion() {
    const auto dir = testkit::config_dir() / "tuning";
    const auto tuning = expand_grid(load_sweep_spec(dir / "tuning_custom_system.yml")).size();
    const auto ablation = expand_grid(load_sweep_spec(dir / "ablation_custom_system.yml")).size();
    return {tuning == 8 && ablation == 6,
            "2x4 sweep -> " + std::to_string(tuning) + " runs, 2x3 ablation -> " + std::to_string(ablation) + " runs"};
}

Outcome instability() {
    const auto a = aggregate_metrics({{{"m", 1.0}}, {{"m", 3.0}}});
    const bool arithmetic = a.size() == 1 && a[0].mean == 2.0 && a[0].std == 1.0 && a[0].std_rel && *a[0].std_rel == 50.0;

    // Hashed features never read featurization.seed, so varying it cannot move any metric.
    TempDir d;
    const RunContext ctx = small_workspace(d);
    const auto cfg = velox(ctx, "SYN", {{"featurization.used_method", "hfh"}, {"featurization.emb_dim", "32"}});
    const auto res = run_n_times(cfg, ctx, 3, Stage::Featurization, "featurization.seed");
    bool zero = !res.aggregates.empty();
    std::size_t with_rel = 0;
    for (const auto& m : res.aggregates) {
        zero &= m.std == 0.0;
        if (m.std_rel) {
            ++with_rel;
            zero &= *m.std_rel == 0.0;
        }
    }
    return {arithmetic && zero,
            std::string("{1,3} -> mean ") + fmt(a[0].mean) + " std " + fmt(a[0].std) + " std_rel " +
                (a[0].std_rel ? fmt(*a[0].std_rel) : "n/a") + "%; seed-independent runs: " +
                std::to_string(res.aggregates.size()) + " metrics, " + std::to_string(with_rel) +
                " with std_rel, all zero=" + (zero ? "yes" : "no")};
}

Outcome gradients() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::size_t combos = 0, entries = 0;
    const std::vector<std::pair<EncoderKind, int>> encoders = {
        {EncoderKind::None, 1}, {EncoderKind::Linear, 1}, {EncoderKind::Sage, 1}, {EncoderKind::Sage, 2}};
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        Rng rng(seed);
        const auto g = testkit::random_graph(rng, 3 + rng.below(8), 4 + rng.below(10));
        Matrix x(g.node_count(), 5);
        for (double& v : x.data) v = rng.uniform(-1, 1);
        for (const auto& [enc, layers] : encoders)
            for (Activation act : {Activation::Relu, Activation::Tanh})
                for (Objective obj : {Objective::EdgeType, Objective::NodeType, Objective::FeatRecon}) {
                    ModelConfig c;
                    c.encoder = enc;
                    c.sage_layers = layers;
                    c.activation = act;
                    c.objective = obj;
                    c.node_hid_dim = 6;
                    c.seed = seed;
                    auto ps = init_params(c, x.cols);
                    oracle::move_off_kinks(ps, c, g, x, seed);
                    const auto r = oracle::gradient_check(ps, c, g, x);
                    worst = std::max(worst, r.max_rel);
                    entries += r.checked;
                    ++combos;
                }
    }
    const double s = seconds_since(t0);
    return {worst <= kGradRelTol && s < kGradBudgetS,
            std::to_string(combos) + " combinations, " + std::to_string(entries) + " entries, max rel err " +
                fmt(worst) + " (tol " + fmt(kGradRelTol) + "), " + fmt(s) + " s"};
}

Outcome metric_oracles() {
    std::vector<std::vector<double>> sets = {{3, 1, 4, 1, 5, 9}, {2, 2, 2, 2, 2, 2}, {0, 1, 2, 3, 4, 5}, {1, 1, 2, 2, 3, 3}};
    Rng rng(17);
    for (int i = 0; i < 100; ++i) {
        std::vector<double> s;
        for (int j = 0; j < 6; ++j) s.push_back(static_cast<double>(rng.below(4)));
        sets.push_back(s);
    }
    std::size_t cases = 0, wrong = 0;
    for (const auto& scores : sets)
        for (unsigned mask = 1; mask < 63; ++mask) {
            ScoreMap sm;
            GroundTruth gt;
            std::vector<bool> labels;
            for (std::size_t i = 0; i < 6; ++i) {
                const std::string id = "n" + std::to_string(i);
                sm[id] = scores[i];
                labels.push_back((mask >> i) & 1u);
                if (labels.back()) gt.malicious[id] = 1;
            }
            const auto m = compute_metrics(make_report(sm, gt, 0.0, 1));
            std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5};
            std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
            });
            std::vector<bool> ranked_labels;
            for (auto i : idx) ranked_labels.push_back(labels[i]);
            ++cases;
            if (!m.average_precision || !oracle::same_fraction(*m.average_precision, oracle::average_precision(ranked_labels)) ||
                !m.auc_roc || !oracle::same_fraction(*m.auc_roc, oracle::auc(scores, labels)))
                ++wrong;
        }
    std::vector<double> s;
    std::vector<bool> l;
    for (int i = 0; i < kAucSamples; ++i) {
        s.push_back(rng.uniform());
        l.push_back(rng.below(2) == 1);
    }
    const double auc = auc_roc(s, l);
    return {wrong == 0 && std::abs(auc - 0.5) <= kAucHalfTol,
            std::to_string(cases - wrong) + "/" + std::to_string(cases) + " labelings exact; random AUC " + fmt(auc, 4) +
                " (0.5 +/- " + fmt(kAucHalfTol) + ")"};
}

Outcome batching() {
    std::size_t plans = 0, broken = 0, neighbor_cases = 0, neighbor_bad = 0;
    for (int ds = 0; ds < kBatchingDatasets; ++ds) {
        Rng rng(1000 + static_cast<std::uint64_t>(ds));
        const auto ws = testkit::random_windows(rng, 50 + rng.below(300), 5 + rng.below(30),
                                                20 + static_cast<int>(rng.below(90)), 1 + static_cast<int>(rng.below(20)));
        std::multiset<EdgeRecord> expect;
        for (const auto& w : ws)
            for (auto& r : edge_records(w)) expect.insert(r);
        for (const char* gm : {"none", "edges", "minutes"})
            for (const char* im : {"none", "edges", "minutes"})
                for (bool inter : {false, true}) {
                    BatchingPlan p;
                    p.global_method = gm;
                    p.global_size = 1 + static_cast<std::int64_t>(rng.below(std::string(gm) == "edges" ? 150 : 30));
                    if (std::string(im) != "none") p.intra_methods = {im};
                    p.intra_size = 1 + static_cast<std::int64_t>(rng.below(std::string(im) == "edges" ? 40 : 15));
                    p.inter = inter;
                    p.inter_size = 1 + static_cast<std::int64_t>(rng.below(4));
                    const auto bs = make_batches(ws, p);
                    std::multiset<EdgeRecord> got;
                    for (const auto& b : bs)
                        for (auto& r : edge_records(b.graph)) got.insert(r);
                    ++plans;
                    broken += got != expect;
                    if (inter) continue;
                    for (int k : {1, 3}) {
                        ++neighbor_cases;
                        neighbor_bad += build_neighbor_index(bs, k) != oracle::neighbors(bs, k);
                    }
                }
    }
    return {broken == 0 && neighbor_bad == 0,
            std::to_string(plans - broken) + "/" + std::to_string(plans) + " (dataset, plan) pairs conserve edges; " +
                std::to_string(neighbor_cases - neighbor_bad) + "/" + std::to_string(neighbor_cases) +
                " neighbor indexes equal the oracle"};
}

Outcome transforms() {
    std::size_t cyclic_inputs = 0, cyclic_outputs = 0, multiset_bad = 0, dedup_bad = 0;
    for (int i = 0; i < kDagGraphs; ++i) {
        Rng rng(5000 + static_cast<std::uint64_t>(i));
        const auto g = testkit::random_graph(rng, 2 + rng.below(20), 1 + rng.below(80));
        cyclic_inputs += oracle::has_cycle(g);
        const auto d = to_dag(g);
        cyclic_outputs += oracle::has_cycle(d);
        multiset_bad += oracle::base_multiset(d) != oracle::base_multiset(g);
        const auto [r, removed] = remove_redundant(g);
        std::vector<std::tuple<std::uint32_t, std::uint32_t, int, std::int64_t, std::uint64_t>> got;
        for (const auto& e : r.edges()) got.emplace_back(e.src, e.dst, static_cast<int>(e.op), e.ts, e.event_id);
        std::sort(got.begin(), got.end());
        dedup_bad += got != oracle::first_occurrences(g) || removed != g.edge_count() - r.edge_count();
    }
    return {cyclic_outputs == 0 && multiset_bad == 0 && dedup_bad == 0,
            std::to_string(kDagGraphs) + " graphs (" + std::to_string(cyclic_inputs) + " cyclic inputs): " +
                std::to_string(cyclic_outputs) + " cyclic outputs, " + std::to_string(multiset_bad) +
                " edge-multiset mismatches, " + std::to_string(dedup_bad) + " dedup mismatches"};
}

Outcome detection() {
    TempDir d;
    SyntheticParams sp;
    sp.seed = 1;
    sp.n_benign_events = 50'000;
    sp.n_attack_chains = 2;
    sp.span_hours = 24;
    write_synthetic(sp, d / "data/SYN50K");
    RunContext ctx;
    ctx.data_dir = d / "data";
    ctx.cache_root = d / "cache";

    int good = 0;
    double slowest = 0.0;
    std::string per_seed;
    for (int seed = 1; seed <= kDetectionSeeds; ++seed) {
        const auto cfg = velox(ctx, "SYN50K", {{"training.seed", std::to_string(seed)}, {"featurization.seed", std::to_string(seed)}});
        const auto t0 = Clock::now();
        const auto res = run_pipeline(cfg, ctx);
        const double s = seconds_since(t0);
        slowest = std::max(slowest, s);

        const fs::path eval = res.records[stage_index(Stage::Evaluation)].dir;
        std::istringstream sin(testkit::read_file(eval / ("epoch_" + std::to_string(res.final_epoch)) / "scores.csv"));
        std::vector<std::pair<double, std::string>> scores;
        std::string line;
        std::getline(sin, line);
        while (std::getline(sin, line)) {
            const auto comma = line.find(',');
            scores.emplace_back(std::stod(line.substr(comma + 1)), line.substr(0, comma));
        }
        std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        std::istringstream lin(testkit::read_file(d / "data/SYN50K/labels.csv"));
        const auto gt = parse_ground_truth(lin);
        const auto cutoff = static_cast<std::size_t>(std::floor(kTopFraction * static_cast<double>(scores.size())));
        std::size_t worst_rank = 0, found = 0;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (gt.contains(scores[i].second)) {
                ++found;
                worst_rank = i + 1;
            }
        const bool ok = found == gt.malicious.size() && worst_rank <= cutoff && s < kPipelineBudgetS;
        good += ok;
        per_seed += " s" + std::to_string(seed) + ":" + std::to_string(found) + "@<=" + std::to_string(worst_rank) + "/" +
                    std::to_string(cutoff) + (ok ? "" : "(miss)");
    }
    return {good >= kDetectionSeedsNeeded && slowest < kPipelineBudgetS,
            std::to_string(good) + "/" + std::to_string(kDetectionSeeds) + " seeds rank all attack nodes in the top " +
                fmt(100 * kTopFraction) + "%;" + per_seed + "; slowest pipeline " + fmt(slowest) + " s"};
}

Outcome determinism() {
    TempDir d;
    const RunContext a = small_workspace(d, "cache_a");
    RunContext b = a;
    b.cache_root = d / "cache_b";
    const auto cfg = velox(a, "SYN");
    const auto ra = run_pipeline(cfg, a);
    const auto rb = run_pipeline(cfg, b);
    const fs::path ta = ra.records[stage_index(Stage::Training)].dir;
    const fs::path tb = rb.records[stage_index(Stage::Training)].dir;
    std::size_t compared = 0, differ = 0;
    for (const auto& e : fs::directory_iterator(ta)) {
        const auto name = e.path().filename().string();
        if (name.rfind("checkpoint_epoch_", 0) != 0) continue;
        ++compared;
        differ += testkit::read_file(e.path()) != testkit::read_file(tb / name);
    }
    const bool metrics_same = testkit::read_file(ra.metrics_path) == testkit::read_file(rb.metrics_path);
    return {compared > 0 && differ == 0 && metrics_same,
            std::to_string(compared) + " checkpoints compared, " + std::to_string(differ) + " differ; metrics.jsonl " +
                (metrics_same ? "identical" : "differs")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"cache chain fidelity", cache_chain},
        {"config defaults", config_defaults},
        {"grid expansion", grid_expansion},
        {"instability arithmetic", instability},
        {"gradient correctness", gradients},
        {"metric oracle equivalence", metric_oracles},
        {"batching conservation", batching},
        {"transform correctness", transforms},
        {"end-to-end detection", detection},
        {"determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed ? 1 : 0;
}

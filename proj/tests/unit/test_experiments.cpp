#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "pidskit/errors.hpp"
#include "pidskit/experiments.hpp"
#include "pidskit/ingest.hpp"
#include "pidskit/rng.hpp"
#include "support/testkit.hpp"

using namespace pidskit;
using testkit::TempDir;

namespace {

struct Workspace {
    TempDir dir;
    RunContext ctx;
    ConfigTree cfg;

    Workspace() {
        write_synthetic(testkit::small_synthetic(), dir / "data/SYN");
        ctx.data_dir = dir / "data";
        ctx.cache_root = dir / "cache";
        cfg = bind_dataset(testkit::fast_config(), ctx, "SYN");
    }
};

std::vector<std::string> rendered(const OverrideSet& o) {
    std::vector<std::string> out;
    for (const auto& [k, v] : o.entries) out.push_back(k + "=" + v);
    return out;
}

}  // namespace

TEST_CASE("shipped sweep files expand to the expected grid sizes") {
    const auto dir = testkit::config_dir() / "tuning";
    CHECK(expand_grid(load_sweep_spec(dir / "tuning_custom_system.yml")).size() == 8);
    CHECK(expand_grid(load_sweep_spec(dir / "ablation_custom_system.yml")).size() == 6);
}

TEST_CASE("grid order is row-major over sorted keys") {
    const auto spec = parse_sweep_spec(parse_yaml_string(
        "method: grid\nparameters:\n  b.y:\n    values: [x, y, z]\n  a.x:\n    values: [1, 2]\n", true));
    const auto g = expand_grid(spec);
    REQUIRE(g.size() == 6);
    CHECK(rendered(g[0]) == std::vector<std::string>{"a.x=1", "b.y=x"});
    CHECK(rendered(g[1]) == std::vector<std::string>{"a.x=1", "b.y=y"});
    CHECK(rendered(g[3]) == std::vector<std::string>{"a.x=2", "b.y=x"});
}

TEST_CASE("grid size is the product of value counts and every set is distinct") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        SweepSpec spec;
        std::size_t expect = 1;
        const auto keys = 1 + rng.below(4);
        for (std::size_t k = 0; k < keys; ++k) {
            const auto n = 1 + rng.below(4);
            expect *= n;
            for (std::size_t v = 0; v < n; ++v)
                spec.parameters["s.p" + std::to_string(k)].push_back(ConfigNode(static_cast<int>(v)));
        }
        const auto g = expand_grid(spec);
        CHECK(g.size() == expect);
        std::set<std::vector<std::string>> distinct;
        for (const auto& o : g) distinct.insert(rendered(o));
        CHECK(distinct.size() == expect);
    }
}

TEST_CASE("sweep spec errors") {
    CHECK_THROWS_AS(parse_sweep_spec(parse_yaml_string("method: random\nparameters:\n  a.b: [1]\n", true)), ConfigError);
    CHECK_THROWS_AS(parse_sweep_spec(parse_yaml_string("method: grid\nparameters:\n  a.b: []\n", true)), ConfigError);
    CHECK_THROWS_AS(parse_sweep_spec(parse_yaml_string("method: grid\n", true)), ConfigError);
}

TEST_CASE("aggregates use the population standard deviation") {
    const auto a = aggregate_metrics({{{"m", 1.0}}, {{"m", 3.0}}});
    REQUIRE(a.size() == 1);
    CHECK(a[0].mean == 2.0);
    CHECK(a[0].std == 1.0);
    REQUIRE(a[0].std_rel.has_value());
    CHECK(*a[0].std_rel == 50.0);
}

TEST_CASE("relative deviation is absent at zero mean and zero for identical runs") {
    const auto z = aggregate_metrics({{{"m", 0.0}}, {{"m", 0.0}}});
    CHECK_FALSE(z[0].std_rel.has_value());
    const auto same = aggregate_metrics({{{"m", 0.7}}, {{"m", 0.7}}, {{"m", 0.7}}});
    CHECK(same[0].std == 0.0);
    CHECK(*same[0].std_rel == 0.0);
    const auto partial = aggregate_metrics({{{"m", 1.0}, {"k", 4.0}}, {{"m", 3.0}}});
    for (const auto& x : partial)
        if (x.metric == "k") CHECK(x.mean == 4.0);
}

TEST_CASE("sweeps record failures, continue, and reuse results") {
    Workspace w;
    const auto spec = parse_sweep_spec(parse_yaml_string(
        "method: grid\nparameters:\n  training.num_epochs:\n    values: [1, 0]\n  training.lr:\n    values: [0.01, 0.02]\n",
        true));
    const auto first = run_sweep(w.cfg, spec, w.ctx);
    REQUIRE(first.runs.size() == 4);
    int failed = 0;
    for (const auto& r : first.runs) {
        failed += r.status == "failed";
        if (r.status == "ok") CHECK_FALSE(r.metrics.empty());
        else CHECK_FALSE(r.error.empty());
    }
    CHECK(failed == 2);
    const auto report = testkit::read_file(first.report_path);
    const auto second = run_sweep(w.cfg, spec, w.ctx);
    CHECK(testkit::read_file(second.report_path) == report);
}

TEST_CASE("repeated runs of a seed-independent pipeline have zero spread") {
    Workspace w;
    const auto res = run_n_times(w.cfg, w.ctx, 3, Stage::Featurization, "featurization.seed");
    REQUIRE(res.runs.size() == 3);
    CHECK_FALSE(res.aggregates.empty());
    for (const auto& a : res.aggregates) {
        CHECK(a.std == 0.0);
        if (a.std_rel) CHECK(*a.std_rel == 0.0);
    }
    CHECK(std::filesystem::exists(res.report_path));
}

TEST_CASE("repeated runs vary the training seed") {
    Workspace w;
    const auto res = run_n_times(w.cfg, w.ctx, 2);
    REQUIRE(res.runs.size() == 2);
    const auto lines = testkit::read_file(res.report_path);
    CHECK(std::count(lines.begin(), lines.end(), '\n') == static_cast<long>(res.aggregates.size()));
    CHECK_THROWS_AS(run_n_times(w.cfg, w.ctx, 1), ConfigError);
}

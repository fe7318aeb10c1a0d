#include <string>
#include <vector>

#include "doctest.h"
#include "pidskit/config.hpp"
#include "pidskit/errors.hpp"
#include "pidskit/experiments.hpp"
#include "pidskit/rng.hpp"
#include "support/testkit.hpp"

using namespace pidskit;
using testkit::TempDir;
using testkit::write_file;

namespace {

const std::vector<std::string> kSystems = {"threatrace", "nodlink", "magic",  "kairos",        "flash",
                                           "rcaid",      "orthrus", "velox",  "custom_system"};

// Every scalar leaf path of a tree.
void leaves(const ConfigNode& n, const std::string& prefix, std::vector<std::string>& out) {
    if (!n.is_map()) {
        out.push_back(prefix);
        return;
    }
    for (const auto& [k, v] : n.as_map()) leaves(v, prefix.empty() ? k : prefix + "." + k, out);
}

}  // namespace

TEST_CASE("yaml subset parses scalars, lists and maps") {
    const auto n = parse_yaml_string(
        "a:\n  i: 3\n  f: 0.5\n  b: True\n  s: hello\n  l: [1, 2]\n  q: \"5\"\n  e: 1e-5\n");
    CHECK(n.find("a.i")->as_int() == 3);
    CHECK(n.find("a.f")->as_double() == 0.5);
    CHECK(n.find("a.b")->as_bool());
    CHECK(n.find("a.s")->as_string() == "hello");
    CHECK(n.find("a.l")->as_list().size() == 2);
    CHECK(n.find("a.q")->kind() == ConfigNode::Kind::String);
    CHECK(n.find("a.e")->as_double() == doctest::Approx(1e-5));
    CHECK(n.find("a.missing") == nullptr);
}

TEST_CASE("dotted keys are rejected outside sweep files") {
    CHECK_THROWS_AS(parse_yaml_string("training.lr: 0.1\n"), ConfigError);
    const auto n = parse_yaml_string("parameters:\n  training.lr: [0.1]\n", true);
    CHECK(n.as_map().at("parameters").as_map().count("training.lr") == 1);
}

TEST_CASE("include chain merges child over base") {
    TempDir d;
    write_file(d / "base.yml", "a:\n  x: 1\n  y: [1, 2]\n  z:\n    p: 1\n    q: 2\n");
    write_file(d / "mid.yml", "_include_yml: base\na:\n  y: [3]\n  z:\n    q: 5\n");
    write_file(d / "top.yml", "_include_yml: mid\na:\n  x: 9\n");
    const auto cfg = load_config(d / "top.yml", d.path());
    CHECK(cfg.get_int("a.x") == 9);
    CHECK(cfg.at("a.y").as_list().size() == 1);
    CHECK(cfg.get_int("a.z.p") == 1);
    CHECK(cfg.get_int("a.z.q") == 5);
    REQUIRE(cfg.source_chain.size() == 3);
    CHECK(cfg.source_chain.front().filename() == "top.yml");
    CHECK(cfg.source_chain.back().filename() == "base.yml");
    CHECK(cfg.find("_include_yml") == nullptr);
}

TEST_CASE("include cycles name the files involved") {
    TempDir d;
    write_file(d / "a.yml", "_include_yml: b\nx: 1\n");
    write_file(d / "b.yml", "_include_yml: a\nx: 2\n");
    try {
        load_config(d / "a.yml", d.path());
        FAIL("expected an include cycle error");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("a.yml") != std::string::npos);
        CHECK(msg.find("b.yml") != std::string::npos);
    }
}

TEST_CASE("deep merge is idempotent on shipped configurations") {
    for (const auto& sys : kSystems) {
        const auto cfg = load_system_config(sys, testkit::config_dir());
        CHECK(deep_merge(cfg.root, cfg.root) == cfg.root);
    }
}

TEST_CASE("shipped configurations validate") {
    for (const auto& sys : kSystems) {
        const auto cfg = load_system_config(sys, testkit::config_dir());
        const auto v = validate_config(cfg, default_schema());
        for (const auto& x : v) MESSAGE(sys << ": " << x.path << ": " << x.reason);
        CHECK(v.empty());
    }
}

TEST_CASE("custom system inherits from orthrus and keeps its own values") {
    const auto cfg = load_system_config("custom_system", testkit::config_dir());
    const auto base = load_system_config("orthrus", testkit::config_dir());
    CHECK(cfg.get_double("training.lr") == base.get_double("training.lr"));
    CHECK(cfg.source_chain.size() >= 2);
}

TEST_CASE("empty override set is the identity") {
    const auto cfg = load_system_config("orthrus", testkit::config_dir());
    CHECK(apply_overrides(cfg, OverrideSet{}) == cfg);
}

TEST_CASE("overrides take precedence over every file layer") {
    const auto cfg = load_system_config("orthrus", testkit::config_dir());
    std::vector<std::string> paths;
    leaves(cfg.root, "", paths);
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const auto& path = paths[rng.below(paths.size())];
        const ConfigNode& cur = cfg.at(path);
        std::string raw;
        switch (cur.kind()) {
            case ConfigNode::Kind::Int: raw = std::to_string(rng.below(1000)); break;
            case ConfigNode::Kind::Float: raw = "0.125"; break;
            case ConfigNode::Kind::Bool: raw = cur.as_bool() ? "False" : "True"; break;
            case ConfigNode::Kind::String: raw = "value" + std::to_string(trial); break;
            default: continue;
        }
        OverrideSet ov;
        ov.add(path, raw);
        const auto out = apply_overrides(cfg, ov);
        CHECK(render_scalar(out.at(path)) == render_scalar(infer_scalar(raw)));
        // Nothing else moves.
        ConfigTree restored = out;
        OverrideSet back;
        back.add(path, render_scalar(cur));
        restored = apply_overrides(restored, back);
        CHECK(restored == cfg);
    }
}

TEST_CASE("later overrides of the same path win") {
    const auto cfg = load_system_config("velox", testkit::config_dir());
    const auto ov = parse_override_args({"--training.lr=0.5", "--training.lr=0.25"});
    CHECK(apply_overrides(cfg, ov).get_double("training.lr") == 0.25);
}

TEST_CASE("override errors") {
    const auto cfg = load_system_config("velox", testkit::config_dir());
    OverrideSet typo;
    typo.add("training.lrr", "0.1");
    CHECK_THROWS_AS(apply_overrides(cfg, typo), ConfigError);
    OverrideSet bad_int;
    bad_int.add("training.num_epochs", "ten");
    CHECK_THROWS_AS(apply_overrides(cfg, bad_int), ConfigError);
    OverrideSet bad_bool;
    bad_bool.add("triage.use_kmeans", "1");
    CHECK_THROWS_AS(apply_overrides(cfg, bad_bool), ConfigError);
    OverrideSet section;
    section.add("training", "1");
    CHECK_THROWS_AS(apply_overrides(cfg, section), ConfigError);
    CHECK_THROWS_AS(parse_override_args({"--lr=0.1"}), ConfigError);
    CHECK_THROWS_AS(parse_override_args({"training.lr=0.1"}), ConfigError);
}

TEST_CASE("bool overrides are case-insensitive") {
    const auto cfg = load_system_config("velox", testkit::config_dir());
    OverrideSet ov;
    ov.add("triage.use_kmeans", "TRUE");
    CHECK(apply_overrides(cfg, ov).get_bool("triage.use_kmeans"));
}

TEST_CASE("method lists accept comma-separated strings") {
    const auto cfg = load_system_config("orthrus", testkit::config_dir());
    const auto intra = cfg.get_list("batching.intra_graph_batching.used_methods");
    CHECK(intra == std::vector<std::string>{"edges", "tgn_last_neighbor"});
}

TEST_CASE("validation reports missing sections and bad values by path") {
    auto cfg = load_system_config("velox", testkit::config_dir());
    cfg.root.as_map().erase("training");
    auto v = validate_config(cfg, default_schema());
    bool training = false;
    for (const auto& x : v) training |= x.path == "training";
    CHECK(training);

    cfg = load_system_config("velox", testkit::config_dir());
    OverrideSet ov;
    ov.add("training.encoder.used_methods", "transformer");
    v = validate_config(apply_overrides(cfg, ov), default_schema());
    REQUIRE(v.size() == 1);
    CHECK(v[0].path == "training.encoder.used_methods");
    CHECK(v[0].reason.find("sage") != std::string::npos);

    OverrideSet neg;
    neg.add("training.lr", "-1");
    v = validate_config(apply_overrides(cfg, neg), default_schema());
    REQUIRE(v.size() == 1);
    CHECK(v[0].path == "training.lr");
}

TEST_CASE("tuned overlay sits between the base file and command-line overrides") {
    const auto dir = testkit::config_dir();
    const auto base = load_system_config("velox", dir);
    const auto tuned = apply_tuned(base, "velox", "CADETS_E3", dir);
    const auto overlay = resolve_tuned("velox", "CADETS_E3", dir);
    CHECK(tuned.get_double("training.lr") == overlay.find("training.lr")->as_double());
    OverrideSet ov;
    ov.add("training.lr", "0.3");
    CHECK(apply_overrides(tuned, ov).get_double("training.lr") == 0.3);
    CHECK(tuned.source_chain.size() == base.source_chain.size() + 1);
}

TEST_CASE("missing tuned overlay names the expected path") {
    try {
        resolve_tuned("velox", "THEIA_E5", testkit::config_dir());
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("tuned/velox/THEIA_E5.yml") != std::string::npos);
    }
}

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "pidskit/errors.hpp"
#include "pidskit/featurize.hpp"
#include "pidskit/rng.hpp"
#include "support/testkit.hpp"

using namespace pidskit;

namespace {

double cosine(const double* a, const double* b, int dim) {
    double ab = 0, aa = 0, bb = 0;
    for (int i = 0; i < dim; ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
    return ab / std::sqrt(aa * bb);
}

double norm(const std::vector<double>& v, std::size_t n) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

// Direct evaluation of the negative-sampling objective.
double sgns_value(const std::vector<double>& h, const std::vector<double>& u, const std::vector<std::vector<double>>& neg) {
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    double l = -std::log(1.0 / (1.0 + std::exp(-dot(h, u))));
    for (const auto& v : neg) l -= std::log(1.0 / (1.0 + std::exp(dot(h, v))));
    return l;
}

// Tokens "a" and "b" share every context; "c" never does.
std::vector<std::vector<std::string>> shared_context_corpus() {
    std::vector<std::vector<std::string>> s;
    for (int i = 0; i < 200; ++i) {
        s.push_back({"x" + std::to_string(i % 4), "a", "y" + std::to_string(i % 3)});
        s.push_back({"x" + std::to_string(i % 4), "b", "y" + std::to_string(i % 3)});
        s.push_back({"p" + std::to_string(i % 4), "c", "q" + std::to_string(i % 3)});
    }
    return s;
}

}  // namespace

TEST_CASE("tokenization per kind") {
    const auto spec = default_feature_spec();
    CHECK(tokenize(EntityKind::File, {{"type", "file"}, {"path", "/usr/bin/ls"}}, spec) ==
          std::vector<std::string>{"file", "usr", "bin", "ls"});
    CHECK(tokenize(EntityKind::Subject, {{"path", "/bin/sh"}, {"cmd_line", "sh  -c   ls"}}, spec) ==
          std::vector<std::string>{"subject", "bin", "sh", "sh", "-c", "ls"});
    CHECK(tokenize(EntityKind::Netflow, {{"remote_ip", "10.0.0.1"}, {"remote_port", "443"}}, spec) ==
          std::vector<std::string>{"netflow", "10", "0", "0", "1", "443"});
    CHECK(tokenize(EntityKind::Subject, {{"path", ""}, {"cmd_line", ""}}, spec) == std::vector<std::string>{"subject"});
}

TEST_CASE("feature spec follows the configuration") {
    const auto cfg = load_system_config("velox", testkit::config_dir());
    const auto spec = feature_spec_from_config(cfg);
    CHECK(spec.attrs.at(EntityKind::File).size() >= 1);
    FeatureSpec bad;
    bad.attrs[EntityKind::File] = {"inode"};
    CHECK_THROWS_AS(tokenize(EntityKind::File, {{"inode", "1"}}, bad), ConfigError);
}

TEST_CASE("hashed features are unit length, deterministic and order sensitive") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> toks;
        const auto n = 2 + rng.below(8);
        for (std::size_t i = 0; i < n; ++i) toks.push_back("t" + std::to_string(i) + "_" + std::to_string(rng.below(1000)));
        for (int dim : {8, 16, 64}) {
            const auto v = feature_hash(toks, dim);
            CHECK(v.size() == static_cast<std::size_t>(dim));
            CHECK(norm(v, v.size()) == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(feature_hash(toks, dim) == v);
        }
    }
    const std::vector<std::string> ab = {"usr", "bin", "python"};
    const std::vector<std::string> ba = {"python", "bin", "usr"};
    CHECK(feature_hash(ab, 64) != feature_hash(ba, 64));
    CHECK_THROWS_AS(feature_hash(ab, 6), ConfigError);
    CHECK_THROWS_AS(feature_hash(ab, 10), ConfigError);
}

TEST_CASE("negative-sampling gradient matches finite differences") {
    Rng rng(2);
    const std::size_t dim = 7;
    auto rv = [&] {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.uniform(-1, 1);
        return v;
    };
    for (int trial = 0; trial < 20; ++trial) {
        auto h = rv(), u = rv();
        std::vector<std::vector<double>> neg = {rv(), rv(), rv()};
        std::vector<double> gh(dim), gu(dim);
        std::vector<std::vector<double>> gn(3, std::vector<double>(dim));
        std::vector<std::span<const double>> negs(neg.begin(), neg.end());
        std::vector<std::span<double>> gns(gn.begin(), gn.end());
        const double l = sgns_loss_grad(h, u, negs, gh, gu, gns);
        CHECK(l == doctest::Approx(sgns_value(h, u, neg)).epsilon(1e-12));
        const double eps = 1e-6;
        auto numeric = [&](std::vector<double>& x, std::size_t i) {
            const double s = x[i];
            x[i] = s + eps;
            const double up = sgns_value(h, u, neg);
            x[i] = s - eps;
            const double dn = sgns_value(h, u, neg);
            x[i] = s;
            return (up - dn) / (2 * eps);
        };
        for (std::size_t i = 0; i < dim; ++i) {
            CHECK(gh[i] == doctest::Approx(numeric(h, i)).epsilon(1e-6));
            CHECK(gu[i] == doctest::Approx(numeric(u, i)).epsilon(1e-6));
            for (std::size_t j = 0; j < 3; ++j) CHECK(gn[j][i] == doctest::Approx(numeric(neg[j], i)).epsilon(1e-6));
        }
    }
}

TEST_CASE("unigram sampler follows count^0.75") {
    const std::vector<std::uint64_t> counts = {100, 50, 10, 5, 1};
    UnigramSampler s(counts);
    double z = 0;
    for (auto c : counts) z += std::pow(static_cast<double>(c), 0.75);
    std::vector<double> freq(counts.size(), 0.0);
    Rng rng(3);
    const int n = 200000;
    for (int i = 0; i < n; ++i) freq[s.sample(rng)] += 1.0 / n;
    for (std::uint32_t i = 0; i < counts.size(); ++i) {
        const double p = std::pow(static_cast<double>(counts[i]), 0.75) / z;
        CHECK(s.probability(i) == doctest::Approx(p).epsilon(1e-12));
        CHECK(std::abs(freq[i] - p) < 0.005);
    }
}

TEST_CASE("corpus vocabulary order and min_count") {
    const auto c = build_corpus({{"b", "a", "a"}, {"c", "a", "b"}}, 2);
    CHECK(c.tokens == std::vector<std::string>{"a", "b"});
    CHECK(c.counts == std::vector<std::uint64_t>{3, 2});
    CHECK(c.sentences.size() == 2);
    CHECK(c.sentences[1] == std::vector<std::uint32_t>{0, 1});
}

TEST_CASE("shared contexts give higher cosine similarity") {
    const auto corpus = build_corpus(shared_context_corpus(), 1);
    SkipgramParams p;
    p.dim = 16;
    p.epochs = 15;
    p.window = 2;
    p.seed = 4;
    const auto t = train_skipgram(corpus, p);
    const auto a = t.index.at("a"), b = t.index.at("b"), c = t.index.at("c");
    CHECK(cosine(t.row(a), t.row(b), p.dim) > cosine(t.row(a), t.row(c), p.dim) + 0.2);
}

TEST_CASE("skip-gram loss decreases and training is deterministic") {
    const auto corpus = build_corpus(shared_context_corpus(), 1);
    SkipgramParams p;
    p.dim = 16;
    p.epochs = 20;
    p.window = 2;
    p.seed = 5;
    const auto t = train_skipgram(corpus, p);
    int rises = 0;
    for (std::size_t i = 1; i < t.epoch_loss.size(); ++i) rises += t.epoch_loss[i] > t.epoch_loss[i - 1];
    CHECK(rises <= 2);
    CHECK(t.epoch_loss.back() < t.epoch_loss.front());
    CHECK(train_skipgram(corpus, p).vectors == t.vectors);
    p.seed = 6;
    CHECK(train_skipgram(corpus, p).vectors != t.vectors);
}

TEST_CASE("embedding table round-trips") {
    testkit::TempDir d;
    const auto corpus = build_corpus(shared_context_corpus(), 1);
    SkipgramParams p;
    p.dim = 8;
    p.epochs = 1;
    const auto t = train_skipgram(corpus, p);
    t.write(d / "e.bin");
    const auto r = EmbeddingTable::read(d / "e.bin");
    CHECK(r.tokens == t.tokens);
    CHECK(r.vectors == t.vectors);
    CHECK(r.dim == t.dim);
}

TEST_CASE("node embeddings append a one-hot kind") {
    const auto spec = default_feature_spec();
    EmbeddingTable t;
    t.dim = 8;
    t.tokens = {"usr"};
    t.vectors.assign(8, 0.5);
    t.rebuild_index();
    const auto oov = embed_node(EntityKind::Netflow, {{"remote_ip", "1.2.3.4"}}, EmbedMethod::Skipgram, &t, 8, spec);
    REQUIRE(oov.size() == 11);
    for (int i = 0; i < 8; ++i) CHECK(oov[static_cast<std::size_t>(i)] == 0.0);
    CHECK(oov[8 + static_cast<int>(EntityKind::Netflow)] == 1.0);
    const auto hit = embed_node(EntityKind::File, {{"path", "/usr/zzz"}}, EmbedMethod::Skipgram, &t, 8, spec);
    CHECK(hit[0] == 0.5);
    const auto h = embed_node(EntityKind::File, {{"path", "/usr/zzz"}}, EmbedMethod::Hash, nullptr, 16, spec);
    CHECK(h.size() == 19);
    CHECK(norm(h, 16) == doctest::Approx(1.0));
    CHECK_THROWS_AS(embed_node(EntityKind::File, {}, EmbedMethod::Skipgram, nullptr, 8, spec), PipelineError);
}

TEST_CASE("identical attributes give identical features") {
    const auto spec = default_feature_spec();
    NodeFeaturizer f(EmbedMethod::Hash, nullptr, 16, spec);
    const Node a{std::string(32, 'a'), 0, EntityKind::File, {{"type", "file"}, {"path", "/etc/passwd"}}};
    Node b = a;
    b.id = std::string(32, 'b');
    CHECK(f.features(a) == f.features(b));
}

TEST_CASE("entity sentences come only from the windows given") {
    Rng rng(7);
    auto train = testkit::random_windows(rng, 100, 20, 30, 15);
    ProvGraph test;
    test.upsert_node(Node{std::string(32, 'f'), 0, EntityKind::File, {{"type", "file"}, {"path", "/only/in/test"}}});
    const auto sentences = entity_sentences(train, default_feature_spec());
    const auto corpus = build_corpus(sentences, 1);
    CHECK(corpus.vocab.count("test") == 0);
    std::set<std::string> ids;
    for (const auto& w : train)
        for (const auto& n : w.nodes()) ids.insert(n.id);
    CHECK(sentences.size() == ids.size());
}

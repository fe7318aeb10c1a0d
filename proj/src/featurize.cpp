#include "pidskit/featurize.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pidskit/errors.hpp"
#include "pidskit/io.hpp"
#include "pidskit/kernels.hpp"
#include "pidskit/rng.hpp"

namespace pidskit {

namespace {

// FNV-1a with distinct offset bases gives two independent-enough hashes.
std::uint64_t fnv1a(std::string_view s, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    // Final avalanche so the low bits used for sign and bucket are well mixed.
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    return h;
}

constexpr std::uint64_t kBucketBasis = 0xcbf29ce484222325ull;
constexpr std::uint64_t kSignBasis = 0x84222325cbf29ce4ull;

void split_into(std::string_view s, char sep, bool any_space, std::vector<std::string>& out) {
    std::size_t i = 0;
    while (i <= s.size()) {
        std::size_t j = i;
        while (j < s.size() && !(any_space ? std::isspace(static_cast<unsigned char>(s[j])) : s[j] == sep)) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j + 1;
    }
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// -log(sigmoid(x)), stable for large |x|.
double neg_log_sigmoid(double x) {
    return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

}  // namespace

FeatureSpec default_feature_spec() {
    FeatureSpec s;
    s.attrs[EntityKind::Subject] = {"path", "cmd_line"};
    s.attrs[EntityKind::File] = {"path"};
    s.attrs[EntityKind::Netflow] = {"remote_ip", "remote_port"};
    return s;
}

FeatureSpec feature_spec_from_config(const ConfigTree& cfg) {
    FeatureSpec s;
    for (EntityKind k : {EntityKind::Subject, EntityKind::File, EntityKind::Netflow}) {
        auto list = cfg.get_list("construction.node_features." + std::string(kind_name(k)));
        list.erase(std::remove(list.begin(), list.end(), "none"), list.end());
        s.attrs[k] = std::move(list);
    }
    return s;
}

std::vector<std::string> tokenize(EntityKind kind, const Attrs& attrs, const FeatureSpec& spec) {
    std::vector<std::string> out;
    out.emplace_back(kind_name(kind));
    auto it = spec.attrs.find(kind);
    if (it == spec.attrs.end()) return out;
    for (const auto& name : it->second) {
        auto a = attrs.find(name);
        if (a == attrs.end() || a->second.empty()) continue;
        if (name == "path") split_into(a->second, '/', false, out);
        else if (name == "cmd_line") split_into(a->second, ' ', true, out);
        else if (name == "remote_ip") split_into(a->second, '.', false, out);
        else if (name == "remote_port" || name == "type") out.push_back(a->second);
        else throw ConfigError("unknown feature attribute: " + name);
    }
    return out;
}

std::vector<double> feature_hash(const std::vector<std::string>& tokens, int dim) {
    if (dim < 8 || dim % 4 != 0) throw ConfigError("feature_hash dim must be >= 8 and divisible by 4");
    std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
    for (std::size_t d = 0; d < tokens.size(); ++d) {
        const auto bucket = fnv1a(tokens[d], kBucketBasis) % static_cast<std::uint64_t>(dim);
        const double sign = (fnv1a(tokens[d], kSignBasis) >> 63) ? -1.0 : 1.0;
        v[bucket] += sign * std::exp2(-static_cast<double>(d) / 4.0);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
    }
    return v;
}

TokenCorpus build_corpus(const std::vector<std::vector<std::string>>& sentences, int min_count) {
    std::map<std::string, std::uint64_t> counts;
    for (const auto& s : sentences)
        for (const auto& t : s) ++counts[t];

    std::vector<std::pair<std::string, std::uint64_t>> kept;
    for (auto& [tok, c] : counts)
        if (c >= static_cast<std::uint64_t>(std::max(min_count, 1))) kept.emplace_back(tok, c);
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    TokenCorpus corpus;
    for (std::uint32_t i = 0; i < kept.size(); ++i) {
        corpus.vocab[kept[i].first] = VocabEntry{i, kept[i].second};
        corpus.tokens.push_back(kept[i].first);
        corpus.counts.push_back(kept[i].second);
    }
    for (const auto& s : sentences) {
        std::vector<std::uint32_t> ids;
        for (const auto& t : s) {
            auto it = corpus.vocab.find(t);
            if (it != corpus.vocab.end()) ids.push_back(it->second.index);
        }
        if (!ids.empty()) corpus.sentences.push_back(std::move(ids));
    }
    return corpus;
}

std::vector<std::vector<std::string>> entity_sentences(const std::vector<ProvGraph>& windows,
                                                       const FeatureSpec& spec) {
    std::set<std::string, std::less<>> seen;
    std::vector<std::vector<std::string>> out;
    for (const auto& g : windows)
        for (const auto& n : g.nodes()) {
            auto id = base_id(n.id);
            if (seen.find(id) != seen.end()) continue;
            seen.emplace(id);
            out.push_back(tokenize(n.kind, n.attrs, spec));
        }
    return out;
}

void EmbeddingTable::rebuild_index() {
    index.clear();
    for (std::uint32_t i = 0; i < tokens.size(); ++i) index.emplace(tokens[i], i);
}

void EmbeddingTable::write(const std::filesystem::path& path) const {
    BinaryWriter w(path);
    w.magic("PEMB");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(dim));
    w.u64(seed);
    w.u64(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        w.str(tokens[i]);
        w.u64(counts.empty() ? 0 : counts[i]);
        for (int d = 0; d < dim; ++d) w.f64(vectors[i * dim + d]);
    }
    w.close();
}

EmbeddingTable EmbeddingTable::read(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("PEMB");
    if (r.u32() != 1) throw DataError("unsupported embedding table version: " + path.string());
    EmbeddingTable t;
    t.dim = static_cast<int>(r.u32());
    t.seed = r.u64();
    const auto n = r.u64();
    t.tokens.reserve(n);
    t.vectors.reserve(n * t.dim);
    for (std::uint64_t i = 0; i < n; ++i) {
        t.tokens.push_back(r.str());
        t.counts.push_back(r.u64());
        for (int d = 0; d < t.dim; ++d) t.vectors.push_back(r.f64());
    }
    t.rebuild_index();
    return t;
}

double sgns_loss_grad(std::span<const double> h, std::span<const double> u,
                      const std::vector<std::span<const double>>& negatives, std::span<double> g_h,
                      std::span<double> g_u, const std::vector<std::span<double>>& g_neg) {
    const std::size_t dim = h.size();
    std::fill(g_h.begin(), g_h.end(), 0.0);

    // d/dx -log s(x) = s(x) - 1
    const double xp = kernels::dot(h, u);
    double loss = neg_log_sigmoid(xp);
    const double cp = sigmoid(xp) - 1.0;
    for (std::size_t i = 0; i < dim; ++i) g_u[i] = cp * h[i];
    kernels::axpy(cp, u, g_h);

    // d/dx -log s(-x) = s(x)
    for (std::size_t j = 0; j < negatives.size(); ++j) {
        const double xn = kernels::dot(h, negatives[j]);
        loss += neg_log_sigmoid(-xn);
        const double cn = sigmoid(xn);
        for (std::size_t i = 0; i < dim; ++i) g_neg[j][i] = cn * h[i];
        kernels::axpy(cn, negatives[j], g_h);
    }
    return loss;
}

UnigramSampler::UnigramSampler(const std::vector<std::uint64_t>& counts) {
    if (counts.empty()) throw DataError("empty vocabulary");
    cdf_.resize(counts.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        acc += std::pow(static_cast<double>(counts[i]), 0.75);
        cdf_[i] = acc;
    }
    for (double& c : cdf_) c /= acc;
    cdf_.back() = 1.0;
}

std::uint32_t UnigramSampler::index_for(double u) const {
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return static_cast<std::uint32_t>(it - cdf_.begin());
}

double UnigramSampler::probability(std::uint32_t i) const {
    return i == 0 ? cdf_[0] : cdf_[i] - cdf_[i - 1];
}

EmbeddingTable train_skipgram(const TokenCorpus& corpus, const SkipgramParams& p) {
    if (corpus.tokens.empty()) throw DataError("skip-gram: empty vocabulary");
    if (p.epochs < 1 || !(p.alpha > 0.0 && p.alpha < 1.0) || p.window < 1 || p.negative < 1 || p.dim < 1)
        throw ConfigError("skip-gram: invalid hyperparameters");

    const std::size_t V = corpus.tokens.size();
    const std::size_t D = static_cast<std::size_t>(p.dim);
    Rng rng(p.seed);
    UnigramSampler sampler(corpus.counts);

    std::vector<double> in(V * D), out(V * D, 0.0);
    for (double& x : in) x = rng.uniform(-0.5, 0.5) / static_cast<double>(D);

    std::size_t total_centers = 0;
    for (const auto& s : corpus.sentences) total_centers += s.size();
    const double steps = static_cast<double>(total_centers) * p.epochs;
    const double alpha_min = p.alpha / 100.0;

    std::vector<double> g_h(D), g_u(D);
    std::vector<std::vector<double>> g_neg_store(p.negative, std::vector<double>(D));
    std::vector<std::uint32_t> neg_ids;
    std::vector<std::span<const double>> negs;
    std::vector<std::span<double>> g_negs;

    EmbeddingTable table;
    double done = 0.0;
    for (int epoch = 0; epoch < p.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t pairs = 0;
        for (const auto& sent : corpus.sentences) {
            for (std::size_t c = 0; c < sent.size(); ++c) {
                const double lr = p.alpha - (p.alpha - alpha_min) * (done / steps);
                done += 1.0;
                const std::size_t lo = c >= static_cast<std::size_t>(p.window) ? c - p.window : 0;
                const std::size_t hi = std::min(sent.size() - 1, c + p.window);
                double* h = in.data() + sent[c] * D;
                for (std::size_t j = lo; j <= hi; ++j) {
                    if (j == c) continue;
                    const std::uint32_t target = sent[j];
                    neg_ids.clear();
                    negs.clear();
                    g_negs.clear();
                    for (int k = 0; k < p.negative; ++k) {
                        const auto s = sampler.sample(rng);
                        if (s == target) continue;
                        neg_ids.push_back(s);
                        negs.emplace_back(out.data() + s * D, D);
                        g_negs.emplace_back(g_neg_store[neg_ids.size() - 1]);
                    }
                    double* u = out.data() + target * D;
                    loss_sum += sgns_loss_grad({h, D}, {u, D}, negs, g_h, g_u, g_negs);
                    ++pairs;
                    kernels::axpy(-lr, g_u, {u, D});
                    for (std::size_t k = 0; k < neg_ids.size(); ++k)
                        kernels::axpy(-lr, g_negs[k], {out.data() + neg_ids[k] * D, D});
                    kernels::axpy(-lr, g_h, {h, D});
                }
            }
        }
        table.epoch_loss.push_back(pairs ? loss_sum / static_cast<double>(pairs) : 0.0);
    }
    for (double x : in)
        if (!std::isfinite(x)) throw PipelineError("skip-gram diverged (non-finite embedding)");

    table.dim = p.dim;
    table.seed = p.seed;
    table.tokens = corpus.tokens;
    table.counts = corpus.counts;
    table.vectors = std::move(in);
    table.rebuild_index();
    return table;
}

std::vector<double> embed_node(EntityKind kind, const Attrs& attrs, EmbedMethod method,
                               const EmbeddingTable* table, int dim, const FeatureSpec& spec) {
    const auto tokens = tokenize(kind, attrs, spec);
    std::vector<double> v;
    if (method == EmbedMethod::Hash) {
        v = feature_hash(tokens, dim);
    } else {
        if (!table) throw PipelineError("skip-gram featurization requires an embedding table");
        if (table->dim != dim) throw PipelineError("embedding table dim does not match emb_dim");
        v.assign(static_cast<std::size_t>(dim), 0.0);
        std::size_t hits = 0;
        for (const auto& t : tokens) {
            auto it = table->index.find(t);
            if (it == table->index.end()) continue;
            kernels::axpy(1.0, {table->row(it->second), static_cast<std::size_t>(dim)}, v);
            ++hits;
        }
        if (hits > 0)
            for (double& x : v) x /= static_cast<double>(hits);
    }
    v.resize(static_cast<std::size_t>(dim) + kNumKinds, 0.0);
    v[static_cast<std::size_t>(dim) + static_cast<std::size_t>(kind)] = 1.0;
    return v;
}

NodeFeaturizer::NodeFeaturizer(EmbedMethod method, const EmbeddingTable* table, int dim, FeatureSpec spec)
    : method_(method), table_(table), dim_(dim), spec_(std::move(spec)) {}

const std::vector<double>& NodeFeaturizer::features(const Node& n) {
    auto key = std::make_pair(n.kind, n.attrs);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    auto v = embed_node(n.kind, n.attrs, method_, table_, dim_, spec_);
    return cache_.emplace(std::move(key), std::move(v)).first->second;
}

}  // namespace pidskit

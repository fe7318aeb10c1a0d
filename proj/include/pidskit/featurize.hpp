#pragma once

// Pipeline stage 3: attribute tokenization, hashed features and skip-gram
// token embeddings.
//
// Embedding table file (little-endian):
//   "PEMB" u32 version=1 u32 dim u64 seed u64 n_tokens
//   n_tokens x { str token, u64 count, dim x f64 }

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pidskit/config.hpp"
#include "pidskit/graph.hpp"

namespace pidskit {

// Attributes tokenized for each entity kind.
struct FeatureSpec {
    std::map<EntityKind, std::vector<std::string>> attrs;
};

FeatureSpec default_feature_spec();
// Reads construction.node_features.{subject,file,netflow}.
FeatureSpec feature_spec_from_config(const ConfigTree& cfg);

// Kind token first, then attribute tokens in spec order.
std::vector<std::string> tokenize(EntityKind kind, const Attrs& attrs, const FeatureSpec& spec);
inline std::vector<std::string> tokenize(const Entity& e, const FeatureSpec& spec) {
    return tokenize(e.kind, e.attrs, spec);
}

// Depth-decayed signed hashing, L2-normalized. dim >= 8 and dim % 4 == 0.
std::vector<double> feature_hash(const std::vector<std::string>& tokens, int dim);

struct VocabEntry {
    std::uint32_t index = 0;
    std::uint64_t count = 0;
};

struct TokenCorpus {
    std::vector<std::vector<std::uint32_t>> sentences;  // vocab indices, OOV dropped
    std::unordered_map<std::string, VocabEntry> vocab;
    std::vector<std::string> tokens;                    // index -> token
    std::vector<std::uint64_t> counts;                  // index -> count
};

// One corpus sentence per input list. Vocabulary order: count descending,
// then token ascending. Tokens seen fewer than min_count times are dropped.
TokenCorpus build_corpus(const std::vector<std::vector<std::string>>& sentences, int min_count);

// Sentences from the distinct entities of the given windows (base id, first
// occurrence wins).
std::vector<std::vector<std::string>> entity_sentences(const std::vector<ProvGraph>& windows,
                                                       const FeatureSpec& spec);

struct SkipgramParams {
    int dim = 128;
    int epochs = 50;
    double alpha = 0.025;
    int window = 5;
    int negative = 5;
    std::uint64_t seed = 0;
};

struct EmbeddingTable {
    int dim = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> tokens;
    std::vector<std::uint64_t> counts;
    std::vector<double> vectors;  // tokens.size() x dim, row-major
    std::unordered_map<std::string, std::uint32_t> index;
    std::vector<double> epoch_loss;  // mean pair loss per epoch; not persisted

    const double* row(std::uint32_t i) const { return vectors.data() + static_cast<std::size_t>(i) * dim; }
    void rebuild_index();
    void write(const std::filesystem::path& path) const;
    static EmbeddingTable read(const std::filesystem::path& path);
};

// Loss of one positive pair and its negatives,
//   L = -log s(h.u) - sum_j log s(-h.v_j),
// with gradients written to the g_* buffers (overwritten, each of length dim).
double sgns_loss_grad(std::span<const double> h, std::span<const double> u,
                      const std::vector<std::span<const double>>& negatives, std::span<double> g_h,
                      std::span<double> g_u, const std::vector<std::span<double>>& g_neg);

// Draws indices with probability proportional to count^0.75.
class UnigramSampler {
public:
    explicit UnigramSampler(const std::vector<std::uint64_t>& counts);
    template <typename R>
    std::uint32_t sample(R& rng) const {
        return index_for(rng.uniform());
    }
    std::uint32_t index_for(double u) const;
    double probability(std::uint32_t i) const;

private:
    std::vector<double> cdf_;
};

EmbeddingTable train_skipgram(const TokenCorpus& corpus, const SkipgramParams& p);

enum class EmbedMethod { Hash, Skipgram };

// Feature vector of length dim + 3 (one-hot kind appended).
std::vector<double> embed_node(EntityKind kind, const Attrs& attrs, EmbedMethod method,
                               const EmbeddingTable* table, int dim, const FeatureSpec& spec);

// Caches embed_node by (kind, attributes).
class NodeFeaturizer {
public:
    NodeFeaturizer(EmbedMethod method, const EmbeddingTable* table, int dim, FeatureSpec spec);
    const std::vector<double>& features(const Node& n);
    int out_dim() const { return dim_ + kNumKinds; }

private:
    EmbedMethod method_;
    const EmbeddingTable* table_;
    int dim_;
    FeatureSpec spec_;
    std::map<std::pair<EntityKind, Attrs>, std::vector<double>> cache_;
};

}  // namespace pidskit

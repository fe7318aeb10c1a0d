#pragma once

// Pipeline stage 5: dense layers with reverse-mode gradients, encoders,
// decoders, self-supervised objectives and the SGD training loop.
//
// Checkpoint file (little-endian):
//   "PCKP" u32 version=1 u32 epoch f64 train_loss f64 val_loss u32 n_params
//   n_params x { str name, u32 rows, u32 cols, rows*cols x f64 }

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pidskit/batching.hpp"
#include "pidskit/config.hpp"
#include "pidskit/featurize.hpp"
#include "pidskit/graph.hpp"

namespace pidskit {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    bool all_finite() const;
    bool operator==(const Matrix&) const = default;
};

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
};

enum class Activation { Relu, Tanh };

// Reverse-mode tape. Operations append nodes; backward() walks them in
// reverse and accumulates into Parameter::grad for parameter leaves.
class Tape {
public:
    using Id = std::size_t;

    Id constant(Matrix m);
    Id param(Parameter& p);

    Id matmul(Id a, Id b);
    Id add_bias(Id a, Id bias);  // bias is 1 x cols, broadcast over rows
    Id activate(Id a, Activation act);
    Id concat_cols(Id a, Id b);
    Id gather_rows(Id a, std::vector<std::uint32_t> rows);
    // Row v becomes the mean of rows in_neighbors[v], or zeros when empty.
    Id mean_aggregate(Id x, std::vector<std::vector<std::uint32_t>> in_neighbors);
    // Mean softmax cross-entropy over rows (1 x 1); per-row losses in *per_row.
    Id softmax_ce(Id logits, std::vector<int> targets, std::vector<double>* per_row);
    // Mean over rows of the row-wise mean squared error; per-row values in *per_row.
    Id mse_rows(Id pred, const Matrix& target, std::vector<double>* per_row);

    const Matrix& value(Id id) const { return nodes_[id].value; }
    void backward(Id scalar);

private:
    struct NodeRec {
        Matrix value;
        Matrix grad;
        Parameter* param = nullptr;
        std::function<void(Tape&, Id)> back;
    };
    Id push(Matrix v, std::function<void(Tape&, Id)> back = {});
    Matrix& grad(Id id);

    std::vector<NodeRec> nodes_;
};

// Numerically stable row softmax.
Matrix softmax_rows(const Matrix& logits);

enum class EncoderKind { None, Linear, Sage };
enum class Objective { EdgeType, NodeType, FeatRecon };

struct ModelConfig {
    EncoderKind encoder = EncoderKind::Linear;
    bool use_context = false;  // sage over last-neighbor context
    int sage_layers = 1;
    Activation activation = Activation::Relu;
    Objective objective = Objective::EdgeType;
    int node_hid_dim = 32;
    double lr = 0.01;
    int epochs = 1;
    std::uint64_t seed = 0;
};

ModelConfig model_config_from(const ConfigTree& cfg);

// Xavier-uniform weights, zero biases, drawn in declaration order.
std::vector<Parameter> init_params(const ModelConfig& cfg, std::size_t in_dim,
                                   int n_ops = kNumOps, int n_kinds = kNumKinds);

struct LossResult {
    double loss = 0.0;                  // mean over items
    std::vector<double> item_loss;
    std::vector<std::uint32_t> items;   // edge indices (edge objective) or node rows
    bool edge_items = true;
};

// Rows of the node feature matrix come from the featurizer in node order.
Matrix node_features(const ProvGraph& g, NodeFeaturizer& feat);

// Forward pass over one batch. With `accumulate`, gradients are added into
// params[i].grad. Batches without scorable items return an empty result.
LossResult batch_loss(std::vector<Parameter>& params, const ModelConfig& cfg, const ProvGraph& g,
                      const Matrix& x, bool accumulate);

// Encoder output only (exposed for tests).
Matrix encode(std::vector<Parameter>& params, const ModelConfig& cfg, const ProvGraph& g, const Matrix& x);

// w <- w - lr * grad, then grads zeroed. Throws PipelineError on a non-finite gradient.
void sgd_step(std::vector<Parameter>& params, double lr);
void zero_grads(std::vector<Parameter>& params);

struct Checkpoint {
    int epoch = 0;
    std::vector<Parameter> params;  // grads empty
    double train_loss = 0.0;
    double val_loss = 0.0;

    void write(const std::filesystem::path& path) const;
    static Checkpoint read(const std::filesystem::path& path);
};

struct TrainData {
    std::vector<Batch> train;
    std::vector<Batch> val;
};

// `on_epoch` runs after each checkpoint is produced, before the next epoch.
std::vector<Checkpoint> train(const TrainData& data, const ModelConfig& cfg, NodeFeaturizer& feat,
                              const std::function<void(const Checkpoint&)>& on_epoch = {});

// Mean batch loss over `batches` without updates.
double mean_loss(std::vector<Parameter>& params, const ModelConfig& cfg, const std::vector<Batch>& batches,
                 NodeFeaturizer& feat);

}  // namespace pidskit

#include "pidskit/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pidskit/errors.hpp"
#include "pidskit/io.hpp"
#include "pidskit/kernels.hpp"
#include "pidskit/rng.hpp"

namespace pidskit {

namespace {

std::span<const double> cspan(const Matrix& m) { return {m.data.data(), m.data.size()}; }
std::span<double> mspan(Matrix& m) { return {m.data.data(), m.data.size()}; }

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}

}  // namespace

bool Matrix::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Tape::Id Tape::push(Matrix v, std::function<void(Tape&, Id)> back) {
    nodes_.push_back(NodeRec{std::move(v), Matrix{}, nullptr, std::move(back)});
    return nodes_.size() - 1;
}

Matrix& Tape::grad(Id id) {
    auto& n = nodes_[id];
    if (n.grad.data.size() != n.value.data.size()) n.grad = Matrix(n.value.rows, n.value.cols);
    return n.grad;
}

Tape::Id Tape::constant(Matrix m) { return push(std::move(m)); }

Tape::Id Tape::param(Parameter& p) {
    const Id id = push(p.value);
    nodes_[id].param = &p;
    return id;
}

Tape::Id Tape::matmul(Id a, Id b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    require(A.cols == B.rows, "matmul");
    Matrix C(A.rows, B.cols);
    kernels::gemm_nn(cspan(A), cspan(B), mspan(C), A.rows, A.cols, B.cols);
    return push(std::move(C), [a, b](Tape& t, Id self) {
        const Matrix& dC = t.nodes_[self].grad;
        const std::size_t m = t.value(a).rows, k = t.value(a).cols, n = t.value(b).cols;
        // dA += dC * B^T ; dB += A^T * dC
        kernels::gemm_nt(cspan(dC), cspan(t.value(b)), mspan(t.grad(a)), m, n, k);
        kernels::gemm_tn(cspan(t.value(a)), cspan(dC), mspan(t.grad(b)), m, k, n);
    });
}

Tape::Id Tape::add_bias(Id a, Id bias) {
    const Matrix& A = value(a);
    const Matrix& b = value(bias);
    require(b.rows == 1 && b.cols == A.cols, "add_bias");
    Matrix C = A;
    for (std::size_t r = 0; r < C.rows; ++r) kernels::axpy(1.0, cspan(b), {C.row(r), C.cols});
    return push(std::move(C), [a, bias](Tape& t, Id self) {
        const Matrix& dC = t.nodes_[self].grad;
        kernels::axpy(1.0, cspan(dC), mspan(t.grad(a)));
        Matrix& db = t.grad(bias);
        for (std::size_t r = 0; r < dC.rows; ++r) kernels::axpy(1.0, {dC.row(r), dC.cols}, mspan(db));
    });
}

Tape::Id Tape::activate(Id a, Activation act) {
    Matrix C = value(a);
    if (act == Activation::Relu)
        for (double& v : C.data) v = v > 0.0 ? v : 0.0;
    else
        for (double& v : C.data) v = std::tanh(v);
    return push(std::move(C), [a, act](Tape& t, Id self) {
        const Matrix& dC = t.nodes_[self].grad;
        const Matrix& out = t.value(self);
        const Matrix& in = t.value(a);
        Matrix& dA = t.grad(a);
        for (std::size_t i = 0; i < dC.data.size(); ++i) {
            const double local = act == Activation::Relu ? (in.data[i] > 0.0 ? 1.0 : 0.0)
                                                         : 1.0 - out.data[i] * out.data[i];
            dA.data[i] += dC.data[i] * local;
        }
    });
}

Tape::Id Tape::concat_cols(Id a, Id b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    require(A.rows == B.rows, "concat_cols");
    Matrix C(A.rows, A.cols + B.cols);
    for (std::size_t r = 0; r < A.rows; ++r) {
        std::copy(A.row(r), A.row(r) + A.cols, C.row(r));
        std::copy(B.row(r), B.row(r) + B.cols, C.row(r) + A.cols);
    }
    return push(std::move(C), [a, b](Tape& t, Id self) {
        const Matrix& dC = t.nodes_[self].grad;
        Matrix& dA = t.grad(a);
        Matrix& dB = t.grad(b);
        for (std::size_t r = 0; r < dC.rows; ++r) {
            kernels::axpy(1.0, {dC.row(r), dA.cols}, {dA.row(r), dA.cols});
            kernels::axpy(1.0, {dC.row(r) + dA.cols, dB.cols}, {dB.row(r), dB.cols});
        }
    });
}

Tape::Id Tape::gather_rows(Id a, std::vector<std::uint32_t> rows) {
    const Matrix& A = value(a);
    Matrix C(rows.size(), A.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] < A.rows, "gather_rows");
        std::copy(A.row(rows[i]), A.row(rows[i]) + A.cols, C.row(i));
    }
    return push(std::move(C), [a, rows = std::move(rows)](Tape& t, Id self) {
        const Matrix& dC = t.nodes_[self].grad;
        Matrix& dA = t.grad(a);
        for (std::size_t i = 0; i < rows.size(); ++i)
            kernels::axpy(1.0, {dC.row(i), dC.cols}, {dA.row(rows[i]), dA.cols});
    });
}

Tape::Id Tape::mean_aggregate(Id x, std::vector<std::vector<std::uint32_t>> in_neighbors) {
    const Matrix& X = value(x);
    require(in_neighbors.size() == X.rows, "mean_aggregate");
    Matrix C(X.rows, X.cols);
    for (std::size_t v = 0; v < X.rows; ++v) {
        const auto& nb = in_neighbors[v];
        if (nb.empty()) continue;
        for (auto u : nb) kernels::axpy(1.0, {X.row(u), X.cols}, {C.row(v), C.cols});
        const double inv = 1.0 / static_cast<double>(nb.size());
        for (std::size_t c = 0; c < C.cols; ++c) C(v, c) *= inv;
    }
    return push(std::move(C), [x, nbrs = std::move(in_neighbors)](Tape& t, Id self) {
        const Matrix& dC = t.nodes_[self].grad;
        Matrix& dX = t.grad(x);
        for (std::size_t v = 0; v < nbrs.size(); ++v) {
            if (nbrs[v].empty()) continue;
            const double inv = 1.0 / static_cast<double>(nbrs[v].size());
            for (auto u : nbrs[v]) kernels::axpy(inv, {dC.row(v), dC.cols}, {dX.row(u), dX.cols});
        }
    });
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows, logits.cols);
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const double* in = logits.row(r);
        const double mx = *std::max_element(in, in + logits.cols);
        double sum = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) sum += (p(r, c) = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < logits.cols; ++c) p(r, c) /= sum;
    }
    return p;
}

Tape::Id Tape::softmax_ce(Id logits, std::vector<int> targets, std::vector<double>* per_row) {
    const Matrix& L = value(logits);
    require(targets.size() == L.rows && L.rows > 0, "softmax_ce");
    Matrix P = softmax_rows(L);
    std::vector<double> losses(L.rows);
    double total = 0.0;
    for (std::size_t r = 0; r < L.rows; ++r) {
        const double* in = L.row(r);
        const double mx = *std::max_element(in, in + L.cols);
        double sum = 0.0;
        for (std::size_t c = 0; c < L.cols; ++c) sum += std::exp(in[c] - mx);
        // -log p_t = log(sum exp) - l_t, clamped at 0 against rounding.
        losses[r] = std::max(0.0, std::log(sum) + mx - in[targets[r]]);
        total += losses[r];
    }
    if (per_row) *per_row = losses;
    Matrix out(1, 1, total / static_cast<double>(L.rows));
    return push(std::move(out), [logits, targets = std::move(targets), P = std::move(P)](Tape& t, Id self) {
        const double g = t.nodes_[self].grad.data[0] / static_cast<double>(P.rows);
        Matrix& dL = t.grad(logits);
        for (std::size_t r = 0; r < P.rows; ++r)
            for (std::size_t c = 0; c < P.cols; ++c)
                dL(r, c) += g * (P(r, c) - (static_cast<int>(c) == targets[r] ? 1.0 : 0.0));
    });
}

Tape::Id Tape::mse_rows(Id pred, const Matrix& target, std::vector<double>* per_row) {
    const Matrix& Y = value(pred);
    require(Y.rows == target.rows && Y.cols == target.cols && Y.rows > 0, "mse_rows");
    std::vector<double> losses(Y.rows);
    double total = 0.0;
    for (std::size_t r = 0; r < Y.rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < Y.cols; ++c) {
            const double d = Y(r, c) - target(r, c);
            s += d * d;
        }
        losses[r] = s / static_cast<double>(Y.cols);
        total += losses[r];
    }
    if (per_row) *per_row = losses;
    Matrix out(1, 1, total / static_cast<double>(Y.rows));
    return push(std::move(out), [pred, target](Tape& t, Id self) {
        const Matrix& Y = t.value(pred);
        const double g = t.nodes_[self].grad.data[0] * 2.0 / static_cast<double>(Y.rows * Y.cols);
        Matrix& dY = t.grad(pred);
        for (std::size_t i = 0; i < Y.data.size(); ++i) dY.data[i] += g * (Y.data[i] - target.data[i]);
    });
}

void Tape::backward(Id scalar) {
    require(value(scalar).data.size() == 1, "backward needs a scalar");
    grad(scalar).data[0] = 1.0;
    for (Id i = scalar + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.grad.data.empty()) continue;
        if (n.back) n.back(*this, i);
        if (n.param) kernels::axpy(1.0, cspan(n.grad), mspan(n.param->grad));
    }
}

ModelConfig model_config_from(const ConfigTree& cfg) {
    ModelConfig m;
    // "tgn" adds last-neighbor context on top of the graph encoder it is
    // listed with (sage when listed alone).
    std::vector<std::string> base;
    for (const auto& e : cfg.get_list("training.encoder.used_methods")) {
        if (e == "tgn") m.use_context = true;
        else base.push_back(e);
    }
    if (base.size() > 1) throw ConfigError("training.encoder.used_methods: at most one graph encoder besides tgn");
    const std::string e = base.empty() ? "sage" : base.front();
    std::string act_key = "training.encoder.sage.activation";
    if (e == "linear") {
        m.encoder = EncoderKind::Linear;
        act_key = "training.encoder.linear.activation";
    } else if (e == "sage" || e == "graph_attention") {
        m.encoder = EncoderKind::Sage;
    } else if (e == "none") {
        m.encoder = EncoderKind::None;
    } else {
        throw ConfigError("unknown encoder: " + e);
    }
    m.activation = cfg.get_string(act_key) == "tanh" ? Activation::Tanh : Activation::Relu;
    m.sage_layers = static_cast<int>(cfg.get_int("training.encoder.sage.num_layers"));

    const auto obj = cfg.get_list("training.objective.used_methods");
    if (obj.size() != 1) throw ConfigError("training.objective.used_methods: exactly one objective is supported");
    if (obj.front() == "edge_type") m.objective = Objective::EdgeType;
    else if (obj.front() == "node_type") m.objective = Objective::NodeType;
    else if (obj.front() == "feat_recon") m.objective = Objective::FeatRecon;
    else throw ConfigError("unknown objective: " + obj.front());

    m.node_hid_dim = static_cast<int>(cfg.get_int("training.node_hid_dim"));
    m.lr = cfg.get_double("training.lr");
    m.epochs = static_cast<int>(cfg.get_int("training.num_epochs"));
    m.seed = static_cast<std::uint64_t>(cfg.get_int("training.seed"));
    if (m.node_hid_dim < 4) throw ConfigError("training.node_hid_dim must be at least 4");
    if (m.sage_layers < 1 || m.sage_layers > 2) throw ConfigError("training.encoder.sage.num_layers must be 1 or 2");
    return m;
}

std::vector<Parameter> init_params(const ModelConfig& cfg, std::size_t in_dim, int n_ops, int n_kinds) {
    if (in_dim == 0 || n_ops <= 0 || n_kinds <= 0 || cfg.node_hid_dim <= 0)
        throw std::invalid_argument("init_params: dimensions must be positive");
    Rng rng(cfg.seed);
    std::vector<Parameter> ps;
    auto weight = [&](std::string name, std::size_t fan_in, std::size_t fan_out) {
        Parameter p{std::move(name), Matrix(fan_in, fan_out), Matrix(fan_in, fan_out)};
        const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : p.value.data) v = rng.uniform(-lim, lim);
        ps.push_back(std::move(p));
    };
    auto bias = [&](std::string name, std::size_t n) {
        ps.push_back(Parameter{std::move(name), Matrix(1, n), Matrix(1, n)});
    };

    const std::size_t hid = static_cast<std::size_t>(cfg.node_hid_dim);
    std::size_t emb = in_dim;
    if (cfg.encoder == EncoderKind::Linear) {
        weight("encoder.linear.W", in_dim, hid);
        bias("encoder.linear.b", hid);
        emb = hid;
    } else if (cfg.encoder == EncoderKind::Sage) {
        for (int l = 0; l < cfg.sage_layers; ++l) {
            const std::string p = "encoder.sage" + std::to_string(l);
            weight(p + ".W", 2 * emb, hid);
            bias(p + ".b", hid);
            emb = hid;
        }
    }
    std::size_t z = emb, out = static_cast<std::size_t>(n_ops);
    if (cfg.objective == Objective::EdgeType) z = 2 * emb;
    else if (cfg.objective == Objective::NodeType) out = static_cast<std::size_t>(n_kinds);
    else out = in_dim;
    weight("decoder.W1", z, hid);
    bias("decoder.b1", hid);
    weight("decoder.W2", hid, out);
    bias("decoder.b2", out);
    return ps;
}

Matrix node_features(const ProvGraph& g, NodeFeaturizer& feat) {
    Matrix x(g.node_count(), static_cast<std::size_t>(feat.out_dim()));
    for (std::size_t r = 0; r < g.node_count(); ++r) {
        const auto& f = feat.features(g.nodes()[r]);
        std::copy(f.begin(), f.end(), x.row(r));
    }
    return x;
}

namespace {

struct Encoded {
    Tape::Id h;
    std::size_t next_param;
};

Encoded encode_on(Tape& t, std::vector<Parameter>& params, const ModelConfig& cfg, const ProvGraph& g,
                  const Matrix& x) {
    if (x.rows != g.node_count()) throw std::invalid_argument("shape mismatch: features vs nodes");
    Tape::Id h = t.constant(x);
    std::size_t p = 0;
    if (cfg.encoder == EncoderKind::Linear) {
        h = t.activate(t.add_bias(t.matmul(h, t.param(params[0])), t.param(params[1])), cfg.activation);
        p = 2;
    } else if (cfg.encoder == EncoderKind::Sage) {
        std::vector<std::vector<std::uint32_t>> in(g.node_count());
        for (const auto& e : g.edges()) in[e.dst].push_back(e.src);
        for (int l = 0; l < cfg.sage_layers; ++l) {
            const auto agg = t.mean_aggregate(h, in);
            const auto z = t.concat_cols(h, agg);
            h = t.activate(t.add_bias(t.matmul(z, t.param(params[p])), t.param(params[p + 1])), cfg.activation);
            p += 2;
        }
    }
    return {h, p};
}

Tape::Id mlp(Tape& t, std::vector<Parameter>& params, std::size_t p, Tape::Id z) {
    const auto hid = t.activate(t.add_bias(t.matmul(z, t.param(params[p])), t.param(params[p + 1])), Activation::Relu);
    return t.add_bias(t.matmul(hid, t.param(params[p + 2])), t.param(params[p + 3]));
}

}  // namespace

Matrix encode(std::vector<Parameter>& params, const ModelConfig& cfg, const ProvGraph& g, const Matrix& x) {
    Tape t;
    return t.value(encode_on(t, params, cfg, g, x).h);
}

LossResult batch_loss(std::vector<Parameter>& params, const ModelConfig& cfg, const ProvGraph& g,
                      const Matrix& x, bool accumulate) {
    LossResult res;
    res.edge_items = cfg.objective == Objective::EdgeType;
    if (res.edge_items) {
        for (std::uint32_t i = 0; i < g.edge_count(); ++i)
            if (g.edges()[i].flag == EdgeFlag::None) res.items.push_back(i);
    } else {
        std::vector<bool> real(g.node_count(), false);
        for (const auto& e : g.edges())
            if (e.flag != EdgeFlag::Context) real[e.src] = real[e.dst] = true;
        for (std::uint32_t r = 0; r < g.node_count(); ++r)
            if (real[r]) res.items.push_back(r);
    }
    if (res.items.empty()) return res;

    Tape t;
    const auto [h, p] = encode_on(t, params, cfg, g, x);
    Tape::Id loss;
    if (res.edge_items) {
        std::vector<std::uint32_t> src, dst;
        std::vector<int> ops;
        for (auto i : res.items) {
            const auto& e = g.edges()[i];
            src.push_back(e.src);
            dst.push_back(e.dst);
            ops.push_back(static_cast<int>(e.op));
        }
        const auto z = t.concat_cols(t.gather_rows(h, std::move(src)), t.gather_rows(h, std::move(dst)));
        loss = t.softmax_ce(mlp(t, params, p, z), std::move(ops), &res.item_loss);
    } else if (cfg.objective == Objective::NodeType) {
        std::vector<int> kinds;
        for (auto r : res.items) kinds.push_back(static_cast<int>(g.nodes()[r].kind));
        const auto z = t.gather_rows(h, res.items);
        loss = t.softmax_ce(mlp(t, params, p, z), std::move(kinds), &res.item_loss);
    } else {
        Matrix target(res.items.size(), x.cols);
        for (std::size_t i = 0; i < res.items.size(); ++i)
            std::copy(x.row(res.items[i]), x.row(res.items[i]) + x.cols, target.row(i));
        const auto z = t.gather_rows(h, res.items);
        loss = t.mse_rows(mlp(t, params, p, z), target, &res.item_loss);
    }
    res.loss = t.value(loss).data[0];
    if (!std::isfinite(res.loss)) throw PipelineError("non-finite loss");
    if (accumulate) t.backward(loss);
    return res;
}

void zero_grads(std::vector<Parameter>& params) {
    for (auto& p : params) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

void sgd_step(std::vector<Parameter>& params, double lr) {
    for (const auto& p : params)
        if (!p.grad.all_finite()) throw PipelineError("non-finite gradient in parameter " + p.name);
    for (auto& p : params) kernels::axpy(-lr, cspan(p.grad), mspan(p.value));
    zero_grads(params);
}

void Checkpoint::write(const std::filesystem::path& path) const {
    BinaryWriter w(path);
    w.magic("PCKP");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(epoch));
    w.f64(train_loss);
    w.f64(val_loss);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.value.rows));
        w.u32(static_cast<std::uint32_t>(p.value.cols));
        for (double v : p.value.data) w.f64(v);
    }
    w.close();
}

Checkpoint Checkpoint::read(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("PCKP");
    if (r.u32() != 1) throw DataError("unsupported checkpoint version: " + path.string());
    Checkpoint c;
    c.epoch = static_cast<int>(r.u32());
    c.train_loss = r.f64();
    c.val_loss = r.f64();
    c.params.resize(r.u32());
    for (auto& p : c.params) {
        p.name = r.str();
        const std::size_t rows = r.u32(), cols = r.u32();
        p.value = Matrix(rows, cols);
        p.grad = Matrix(rows, cols);
        for (double& v : p.value.data) v = r.f64();
    }
    return c;
}

double mean_loss(std::vector<Parameter>& params, const ModelConfig& cfg, const std::vector<Batch>& batches,
                 NodeFeaturizer& feat) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& b : batches) {
        const auto r = batch_loss(params, cfg, b.graph, node_features(b.graph, feat), false);
        if (r.items.empty()) continue;
        sum += r.loss;
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

std::vector<Checkpoint> train(const TrainData& data, const ModelConfig& cfg, NodeFeaturizer& feat,
                              const std::function<void(const Checkpoint&)>& on_epoch) {
    if (cfg.epochs < 1) throw ConfigError("training.num_epochs must be at least 1");
    std::vector<Matrix> xs;
    xs.reserve(data.train.size());
    for (const auto& b : data.train) xs.push_back(node_features(b.graph, feat));

    auto params = init_params(cfg, static_cast<std::size_t>(feat.out_dim()));
    std::vector<Checkpoint> out;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        zero_grads(params);
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < data.train.size(); ++i) {
            const auto r = batch_loss(params, cfg, data.train[i].graph, xs[i], true);
            if (r.items.empty()) continue;
            try {
                sgd_step(params, cfg.lr);
            } catch (const PipelineError& e) {
                throw PipelineError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(i) + ", batch loss " + std::to_string(r.loss) + ")");
            }
            sum += r.loss;
            ++n;
        }
        if (n == 0) throw PipelineError("training: no train batch has scorable items");
        Checkpoint c;
        c.epoch = epoch;
        c.train_loss = sum / static_cast<double>(n);
        c.val_loss = mean_loss(params, cfg, data.val, feat);
        c.params = params;
        for (auto& p : c.params) p.grad = Matrix();
        if (on_epoch) on_epoch(c);
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace pidskit

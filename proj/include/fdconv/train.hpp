#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdconv/autodiff.hpp"
#include "fdconv/checkpoint.hpp"
#include "fdconv/config.hpp"
#include "fdconv/dataset.hpp"
#include "fdconv/layer.hpp"
#include "fdconv/rng.hpp"
#include "fdconv/tensor.hpp"

namespace fdconv {

// Toy classification harness: one convolution layer (dynamic or a plain
// static baseline), ReLU, global average pool, linear classifier, softmax
// cross-entropy.  Deterministic end to end: layer init uses seed, dataset
// seed+1, batch shuffling seed+2.

enum class ModelKind { kFdconv, kStaticConv };

struct ToyModel {
    ModelKind kind = ModelKind::kFdconv;
    LayerState layer;      // parameters of the dynamic layer (kFdconv)
    RealTensor static_w;   // plain kernel (kStaticConv)
    RealTensor cls_w;      // (c_out, classes)
    RealTensor cls_b;      // (classes)
};

inline ToyModel init_toy_model(const TrainConfig& c, std::size_t classes, ModelKind kind) {
    validate_train_config(c);
    ToyModel m;
    m.kind = kind;
    m.layer = init_layer_state(c.layer);
    if (kind == ModelKind::kStaticConv) {
        // Same effective init as the dynamic model: the ungrouped
        // materialization is exactly the Kaiming spatial sample behind the bank.
        const GroupAssignment whole = assign_groups(m.layer.assignment.table, 1);
        m.static_w = materialize_group(m.layer.bank, whole, 0);
    }
    // A small random classifier head lets gradient reach the convolution from
    // the very first step; a zero head would block it until the classifier has
    // moved.  Seed offset 3 keeps it clear of the layer (seed), dataset
    // (seed+1) and shuffle (seed+2) streams.
    Rng cls_rng(c.layer.seed + 3);
    m.cls_w = RealTensor({static_cast<std::size_t>(c.layer.c_out), classes});
    const double scale = 1.0 / std::sqrt(static_cast<double>(c.layer.c_out));
    for (double& v : m.cls_w.data) v = cls_rng.normal(0.0, scale);
    m.cls_b = RealTensor({classes}, 0.0);
    return m;
}

inline RealTensor forward_logits(const ToyModel& m, const RealTensor& x, const MaterializedLayer& pre) {
    RealTensor y = m.kind == ModelKind::kFdconv ? fdconv_forward(x, m.layer, pre)
                                                : conv2d_direct(x, m.static_w, ConvMode::kCircular);
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    const std::size_t co = y.shape[0], hw = y.shape[1] * y.shape[2];
    const std::size_t classes = m.cls_b.numel();
    RealTensor logits({classes});
    for (std::size_t j = 0; j < classes; ++j) {
        double s = m.cls_b[j];
        for (std::size_t c = 0; c < co; ++c) {
            double f = 0.0;
            for (std::size_t i = 0; i < hw; ++i) f += y.data[c * hw + i];
            s += (f / static_cast<double>(hw)) * m.cls_w(c, j);
        }
        logits[j] = s;
    }
    return logits;
}

struct EvalResult {
    double accuracy = 0.0;
    std::size_t correct = 0, total = 0;
};

inline EvalResult evaluate(const ToyModel& m, const BandDataset& ds, bool heldout) {
    const std::vector<std::size_t> idx = split_indices(ds, heldout);
    if (idx.empty()) throw std::invalid_argument("evaluate: empty split");
    const MaterializedLayer pre = precompute_layer(m.layer, ds.extent, ds.extent);
    EvalResult r;
    r.total = idx.size();
    for (std::size_t i : idx) {
        const RealTensor logits = forward_logits(m, ds.images[i], pre);
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.numel(); ++j)
            if (logits[j] > logits[best]) best = j;
        if (static_cast<int>(best) == ds.labels[i]) ++r.correct;
    }
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    return r;
}

// --- optimizers ---------------------------------------------------------------

class Optimizer {
  public:
    Optimizer(std::string kind, double lr) : kind_(std::move(kind)), lr_(lr) {
        if (kind_ != "sgd" && kind_ != "adam")
            throw std::invalid_argument("Optimizer: unknown kind '" + kind_ + "'");
    }

    void step(const std::vector<RealTensor*>& params, const std::vector<RealTensor>& grads) {
        if (params.size() != grads.size())
            throw std::invalid_argument("Optimizer::step: " + std::to_string(params.size()) +
                                        " parameters vs " + std::to_string(grads.size()) + " gradients");
        if (m_.empty()) {
            for (const RealTensor* p : params) {
                m_.emplace_back(p->shape, 0.0);
                v_.emplace_back(p->shape, 0.0);
            }
        }
        ++t_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            RealTensor& p = *params[i];
            const RealTensor& g = grads[i];
            if (p.shape != g.shape)
                throw std::invalid_argument("Optimizer::step: gradient shape " + shape_str(g.shape) +
                                            " vs parameter " + shape_str(p.shape));
            if (kind_ == "sgd") {
                for (std::size_t e = 0; e < p.numel(); ++e) {
                    m_[i].data[e] = 0.9 * m_[i].data[e] + g.data[e];
                    p.data[e] -= lr_ * m_[i].data[e];
                }
            } else {
                const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
                for (std::size_t e = 0; e < p.numel(); ++e) {
                    m_[i].data[e] = b1 * m_[i].data[e] + (1.0 - b1) * g.data[e];
                    v_[i].data[e] = b2 * v_[i].data[e] + (1.0 - b2) * g.data[e] * g.data[e];
                    p.data[e] -= lr_ * (m_[i].data[e] / c1) / (std::sqrt(v_[i].data[e] / c2) + eps);
                }
            }
        }
    }

  private:
    std::string kind_;
    double lr_;
    int t_ = 0;
    std::vector<RealTensor> m_, v_;
};

// --- training loop -------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;        // mean batch loss over the epoch
    double heldout_accuracy = 0.0;
};

struct TrainResult {
    ToyModel model;
    std::vector<EpochLog> log;
    int steps_run = 0;
};

namespace detail {

inline std::vector<RealTensor*> model_params(ToyModel& m) {
    std::vector<RealTensor*> out;
    if (m.kind == ModelKind::kFdconv) {
        out.push_back(&m.layer.bank.params);
        out.push_back(&m.layer.attention.fc1_w);
        out.push_back(&m.layer.attention.fc1_b);
        out.push_back(&m.layer.attention.fc2_w);
        out.push_back(&m.layer.attention.fc2_b);
        if (m.layer.config.enable_ksm) {
            out.push_back(&m.layer.ksm.local_w);
            out.push_back(&m.layer.ksm.g_fc1_w);
            out.push_back(&m.layer.ksm.g_fc1_b);
            out.push_back(&m.layer.ksm.g_fc2_w);
            out.push_back(&m.layer.ksm.g_fc2_b);
        }
        if (m.layer.config.enable_fbm) {
            out.push_back(&m.layer.fbm.conv_w);
            out.push_back(&m.layer.fbm.conv_b);
        }
    } else {
        out.push_back(&m.static_w);
    }
    out.push_back(&m.cls_w);
    out.push_back(&m.cls_b);
    return out;
}

}  // namespace detail

// Runs one optimization step over the given sample indices; returns the batch
// loss.  Exposed separately so tests can step the model by hand.
inline double train_step(ToyModel& model, const BandDataset& ds, const std::vector<std::size_t>& batch,
                         Optimizer& opt) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const std::size_t classes = model.cls_b.numel();

    Tape tape;
    std::vector<NodeId> param_nodes;
    LayerTapeCtx ctx;
    if (model.kind == ModelKind::kFdconv) {
        ctx = begin_layer_tape(tape, model.layer, ds.extent, ds.extent);
        param_nodes.push_back(ctx.params.bank);
        param_nodes.push_back(ctx.params.attn_fc1_w);
        param_nodes.push_back(ctx.params.attn_fc1_b);
        param_nodes.push_back(ctx.params.attn_fc2_w);
        param_nodes.push_back(ctx.params.attn_fc2_b);
        if (model.layer.config.enable_ksm) {
            param_nodes.push_back(ctx.params.ksm_local_w);
            param_nodes.push_back(ctx.params.ksm_fc1_w);
            param_nodes.push_back(ctx.params.ksm_fc1_b);
            param_nodes.push_back(ctx.params.ksm_fc2_w);
            param_nodes.push_back(ctx.params.ksm_fc2_b);
        }
        if (model.layer.config.enable_fbm) {
            param_nodes.push_back(ctx.params.fbm_conv_w);
            param_nodes.push_back(ctx.params.fbm_conv_b);
        }
    } else {
        param_nodes.push_back(tape.parameter(model.static_w));
    }
    const NodeId cls_w = tape.parameter(model.cls_w);
    const NodeId cls_b = tape.parameter(model.cls_b);
    param_nodes.push_back(cls_w);
    param_nodes.push_back(cls_b);

    NodeId total = -1;
    for (std::size_t i : batch) {
        const NodeId x = tape.constant(ds.images[i]);
        const NodeId y = model.kind == ModelKind::kFdconv
                             ? layer_forward_on_tape(tape, ctx, x)
                             : tape.conv2d(x, param_nodes[0], ConvMode::kCircular);
        const NodeId f = tape.reshape(tape.gap(tape.relu(y)), {1, tape.value(y).shape[0]});
        const NodeId logits =
            tape.add(tape.matmul(f, cls_w), tape.reshape(cls_b, {1, classes}));
        const NodeId loss = tape.softmax_xent(tape.reshape(logits, {classes}), ds.labels[i]);
        total = total < 0 ? loss : tape.add(total, loss);
    }
    const NodeId mean = tape.scale(total, 1.0 / static_cast<double>(batch.size()));
    const double loss_value = tape.value(mean)[0];

    const GradientMap grads = tape.backprop(mean, RealTensor({1}, 1.0));
    std::vector<RealTensor*> params = detail::model_params(model);
    std::vector<RealTensor> gvals;
    gvals.reserve(params.size());
    for (std::size_t i = 0; i < param_nodes.size(); ++i)
        gvals.push_back(grads.has(param_nodes[i]) ? grads.at(param_nodes[i])
                                                  : RealTensor(params[i]->shape, 0.0));
    opt.step(params, gvals);
    return loss_value;
}

inline TrainResult train(const TrainConfig& config, const BandDataset& ds, ModelKind kind) {
    validate_train_config(config);
    if (config.layer.c_in != 1)
        throw std::invalid_argument("train: synthetic dataset is single channel, c_in must be 1");
    if (ds.extent != config.dataset_s)
        throw std::invalid_argument("train: dataset extent " + std::to_string(ds.extent) +
                                    " does not match config dataset.s " + std::to_string(config.dataset_s));
    if (ds.classes < 2) throw std::invalid_argument("train: need at least two classes");

    TrainResult result;
    result.model = init_toy_model(config, ds.classes, kind);
    Optimizer opt(config.optimizer, config.lr);
    Rng shuffle_rng(config.layer.seed + 2);

    std::vector<std::size_t> train_idx = split_indices(ds, false);
    if (train_idx.empty()) throw std::invalid_argument("train: empty training split");

    int step = 0, epoch = 0;
    while (step < config.steps) {
        ++epoch;
        shuffle_rng.shuffle(train_idx);
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t pos = 0; pos < train_idx.size() && step < config.steps;
             pos += static_cast<std::size_t>(config.batch)) {
            const std::size_t end = std::min(train_idx.size(), pos + static_cast<std::size_t>(config.batch));
            const std::vector<std::size_t> batch(train_idx.begin() + static_cast<std::ptrdiff_t>(pos),
                                                 train_idx.begin() + static_cast<std::ptrdiff_t>(end));
            // Exploding values can surface in three ways: a non-finite batch
            // loss, a non-finite-data error raised mid-graph (the transforms
            // reject such inputs), or parameters pushed past the finite range
            // by the update itself.  All three are the same event; name it
            // with the step that caused it.
            double loss = 0.0;
            try {
                loss = train_step(result.model, ds, batch, opt);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("train: loss diverged (non-finite) at step " +
                                         std::to_string(step + 1) + ": " + e.what());
            }
            if (!std::isfinite(loss))
                throw std::runtime_error("train: loss diverged (non-finite) at step " +
                                         std::to_string(step + 1));
            // An oversized update can blow up the parameters while the loss it
            // was computed from is still finite; catch that here rather than as
            // a transform error in the next forward pass.
            for (const RealTensor* p : detail::model_params(result.model))
                for (double v : p->data)
                    if (!std::isfinite(v))
                        throw std::runtime_error(
                            "train: parameters diverged (non-finite) at step " +
                            std::to_string(step + 1));
            loss_sum += loss;
            ++batches;
            ++step;
        }
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(batches);
        log.heldout_accuracy = evaluate(result.model, ds, true).accuracy;
        result.log.push_back(log);
    }
    result.steps_run = step;
    return result;
}

// --- model checkpointing --------------------------------------------------------

inline Checkpoint model_to_checkpoint(const ToyModel& m, const TrainConfig& config,
                                      const std::vector<EpochLog>& log) {
    Checkpoint ck;
    ck.manifest = serialize_train_config(config);
    RealTensor metrics({log.size(), 3});
    for (std::size_t i = 0; i < log.size(); ++i) {
        metrics(i, 0) = static_cast<double>(log[i].epoch);
        metrics(i, 1) = log[i].train_loss;
        metrics(i, 2) = log[i].heldout_accuracy;
    }
    ck.tensors.emplace_back("metrics", std::move(metrics));
    if (m.kind == ModelKind::kFdconv) {
        ck.tensors.emplace_back("bank", m.layer.bank.params);
        ck.tensors.emplace_back("attn.fc1_w", m.layer.attention.fc1_w);
        ck.tensors.emplace_back("attn.fc1_b", m.layer.attention.fc1_b);
        ck.tensors.emplace_back("attn.fc2_w", m.layer.attention.fc2_w);
        ck.tensors.emplace_back("attn.fc2_b", m.layer.attention.fc2_b);
        if (m.layer.config.enable_ksm) {
            ck.tensors.emplace_back("ksm.local_w", m.layer.ksm.local_w);
            ck.tensors.emplace_back("ksm.fc1_w", m.layer.ksm.g_fc1_w);
            ck.tensors.emplace_back("ksm.fc1_b", m.layer.ksm.g_fc1_b);
            ck.tensors.emplace_back("ksm.fc2_w", m.layer.ksm.g_fc2_w);
            ck.tensors.emplace_back("ksm.fc2_b", m.layer.ksm.g_fc2_b);
        }
        if (m.layer.config.enable_fbm) {
            ck.tensors.emplace_back("fbm.conv_w", m.layer.fbm.conv_w);
            ck.tensors.emplace_back("fbm.conv_b", m.layer.fbm.conv_b);
        }
    } else {
        ck.tensors.emplace_back("static.w", m.static_w);
    }
    ck.tensors.emplace_back("cls.w", m.cls_w);
    ck.tensors.emplace_back("cls.b", m.cls_b);
    return ck;
}

struct LoadedRun {
    TrainConfig config;
    ToyModel model;
    std::vector<EpochLog> log;
};

inline LoadedRun checkpoint_to_model(const Checkpoint& ck) {
    LoadedRun run;
    run.config = parse_train_config(ck.manifest);
    const bool is_static = ck.find("static.w") != nullptr;
    run.model = init_toy_model(run.config, ck.require("cls.b").numel(),
                               is_static ? ModelKind::kStaticConv : ModelKind::kFdconv);

    auto restore = [&](const char* name, RealTensor& dst) {
        const RealTensor& src = ck.require(name);
        if (src.shape != dst.shape)
            throw std::runtime_error("checkpoint: tensor '" + std::string(name) + "' has shape " +
                                     shape_str(src.shape) + ", config implies " + shape_str(dst.shape));
        dst = src;
    };

    if (is_static) {
        restore("static.w", run.model.static_w);
    } else {
        restore("bank", run.model.layer.bank.params);
        restore("attn.fc1_w", run.model.layer.attention.fc1_w);
        restore("attn.fc1_b", run.model.layer.attention.fc1_b);
        restore("attn.fc2_w", run.model.layer.attention.fc2_w);
        restore("attn.fc2_b", run.model.layer.attention.fc2_b);
        if (run.config.layer.enable_ksm) {
            restore("ksm.local_w", run.model.layer.ksm.local_w);
            restore("ksm.fc1_w", run.model.layer.ksm.g_fc1_w);
            restore("ksm.fc1_b", run.model.layer.ksm.g_fc1_b);
            restore("ksm.fc2_w", run.model.layer.ksm.g_fc2_w);
            restore("ksm.fc2_b", run.model.layer.ksm.g_fc2_b);
        }
        if (run.config.layer.enable_fbm) {
            restore("fbm.conv_w", run.model.layer.fbm.conv_w);
            restore("fbm.conv_b", run.model.layer.fbm.conv_b);
        }
    }
    restore("cls.w", run.model.cls_w);
    restore("cls.b", run.model.cls_b);

    const RealTensor& metrics = ck.require("metrics");
    if (metrics.rank() != 2 || metrics.shape[1] != 3)
        throw std::runtime_error("checkpoint: metrics tensor has shape " + shape_str(metrics.shape) +
                                 ", expected (epochs, 3)");
    for (std::size_t i = 0; i < metrics.shape[0]; ++i)
        run.log.push_back({static_cast<int>(metrics(i, 0)), metrics(i, 1), metrics(i, 2)});
    return run;
}

}  // namespace fdconv

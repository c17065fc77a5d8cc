#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdconv/conv.hpp"
#include "fdconv/fbm.hpp"
#include "fdconv/fdw.hpp"
#include "fdconv/rng.hpp"
#include "fdconv/tensor.hpp"

namespace fdconv {

// Reverse-mode tape.  Values are computed eagerly at record time and stored
// per node; backprop walks the node list in reverse with a fixed accumulation
// order, so gradients are bitwise reproducible run to run.

enum class Op {
    kConst,
    kParam,
    kAdd,
    kMul,
    kMatmul,
    kConv2d,
    kGap,
    kRelu,
    kSigmoid,
    kSoftmax,
    kReshape,
    kBandFilter,
    kFdwMaterialize,
    kSum,
    kScale,
    kSoftmaxXent,
};

using NodeId = int;

struct Node {
    Op op = Op::kConst;
    NodeId in0 = -1, in1 = -1;
    RealTensor value;
    double scalar = 0.0;                           // scale factor / softmax temperature
    int label = -1;                                // cross-entropy target class
    ConvMode mode = ConvMode::kCircular;           // conv2d padding
    std::shared_ptr<const RealTensor> mask;        // band_filter spectrum mask
    std::shared_ptr<const GroupAssignment> groups; // fdw_materialize grouping
};

class GradientMap {
  public:
    bool has(NodeId id) const { return grads_.count(id) != 0; }
    const RealTensor& at(NodeId id) const {
        auto it = grads_.find(id);
        if (it == grads_.end())
            throw std::invalid_argument("GradientMap: no gradient for node " + std::to_string(id));
        return it->second;
    }

  private:
    friend class Tape;
    std::map<NodeId, RealTensor> grads_;
};

class Tape {
  public:
    NodeId constant(RealTensor v) {
        Node n;
        n.op = Op::kConst;
        n.value = std::move(v);
        return push(std::move(n));
    }

    NodeId parameter(RealTensor v) {
        Node n;
        n.op = Op::kParam;
        n.value = std::move(v);
        const NodeId id = push(std::move(n));
        params_.push_back(id);
        return id;
    }

    NodeId add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b); }
    NodeId mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b); }

    NodeId matmul(NodeId a, NodeId b) {
        check_id(a, "matmul");
        check_id(b, "matmul");
        Node n;
        n.op = Op::kMatmul;
        n.in0 = a;
        n.in1 = b;
        n.value = matmul2(value(a), value(b));
        return push(std::move(n));
    }

    NodeId conv2d(NodeId x, NodeId w, ConvMode mode) {
        check_id(x, "conv2d");
        check_id(w, "conv2d");
        Node n;
        n.op = Op::kConv2d;
        n.in0 = x;
        n.in1 = w;
        n.mode = mode;
        n.value = conv2d_direct(value(x), value(w), mode);
        return push(std::move(n));
    }

    NodeId gap(NodeId x) {
        check_id(x, "gap");
        const RealTensor& v = value(x);
        if (v.rank() != 3)
            throw std::invalid_argument("gap: input must be (C,H,W), got " + shape_str(v.shape));
        Node n;
        n.op = Op::kGap;
        n.in0 = x;
        RealTensor out({v.shape[0]}, 0.0);
        const double inv = 1.0 / static_cast<double>(v.shape[1] * v.shape[2]);
        for (std::size_t c = 0; c < v.shape[0]; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < v.shape[1] * v.shape[2]; ++i)
                s += v.data[c * v.shape[1] * v.shape[2] + i];
            out[c] = s * inv;
        }
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId relu(NodeId x) {
        check_id(x, "relu");
        Node n;
        n.op = Op::kRelu;
        n.in0 = x;
        n.value = value(x);
        for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
        return push(std::move(n));
    }

    NodeId sigmoid(NodeId x) {
        check_id(x, "sigmoid");
        Node n;
        n.op = Op::kSigmoid;
        n.in0 = x;
        n.value = value(x);
        for (double& v : n.value.data) v = fdconv::sigmoid(v);
        return push(std::move(n));
    }

    NodeId softmax(NodeId x, double tau) {
        check_id(x, "softmax");
        const RealTensor& v = value(x);
        if (v.rank() != 1)
            throw std::invalid_argument("softmax: input must be rank 1, got " + shape_str(v.shape));
        Node n;
        n.op = Op::kSoftmax;
        n.in0 = x;
        n.scalar = tau;
        n.value = softmax_vec(v, tau);
        return push(std::move(n));
    }

    NodeId reshape(NodeId x, std::vector<std::size_t> shape) {
        check_id(x, "reshape");
        const RealTensor& v = value(x);
        if (shape_numel(shape) != v.numel())
            throw std::invalid_argument("reshape: cannot view " + shape_str(v.shape) + " as " +
                                        shape_str(shape));
        Node n;
        n.op = Op::kReshape;
        n.in0 = x;
        n.value = RealTensor(std::move(shape), v.data);
        return push(std::move(n));
    }

    NodeId band_filter(NodeId x, std::shared_ptr<const RealTensor> mask) {
        check_id(x, "band_filter");
        if (!mask) throw std::invalid_argument("band_filter: null mask");
        Node n;
        n.op = Op::kBandFilter;
        n.in0 = x;
        n.mask = std::move(mask);
        n.value = fdconv::band_filter(value(x), *n.mask);
        return push(std::move(n));
    }

    // Materializes every group of the bank; output row g is kernel g
    // flattened, shape (n, k*k*C_in*C_out).
    NodeId fdw_materialize(NodeId bank, std::shared_ptr<const GroupAssignment> groups) {
        check_id(bank, "fdw_materialize");
        if (!groups) throw std::invalid_argument("fdw_materialize: null group assignment");
        const RealTensor& v = value(bank);
        if (v.rank() != 1 || v.numel() != groups->table.param_total)
            throw std::invalid_argument("fdw_materialize: bank " + shape_str(v.shape) + " does not match " +
                                        std::to_string(groups->table.param_total) + " coefficients");
        Node n;
        n.op = Op::kFdwMaterialize;
        n.in0 = bank;
        n.groups = std::move(groups);
        n.value = materialize_stacked(v, *n.groups);
        return push(std::move(n));
    }

    NodeId sum(NodeId x) {
        check_id(x, "sum");
        Node n;
        n.op = Op::kSum;
        n.in0 = x;
        double s = 0.0;
        for (double v : value(x).data) s += v;
        n.value = RealTensor({1}, {s});
        return push(std::move(n));
    }

    NodeId scale(NodeId x, double c) {
        check_id(x, "scale");
        if (!std::isfinite(c)) throw std::invalid_argument("scale: non-finite factor");
        Node n;
        n.op = Op::kScale;
        n.in0 = x;
        n.scalar = c;
        n.value = scaled(value(x), c);
        return push(std::move(n));
    }

    // Fused softmax + cross-entropy against a one-hot target; returns the
    // scalar loss.  Fusing avoids a standalone log op and is stable for
    // extreme logits.
    NodeId softmax_xent(NodeId logits, int label) {
        check_id(logits, "softmax_xent");
        const RealTensor& z = value(logits);
        if (z.rank() != 1)
            throw std::invalid_argument("softmax_xent: logits must be rank 1, got " + shape_str(z.shape));
        if (label < 0 || static_cast<std::size_t>(label) >= z.numel())
            throw std::invalid_argument("softmax_xent: label " + std::to_string(label) + " out of range for " +
                                        std::to_string(z.numel()) + " classes");
        Node n;
        n.op = Op::kSoftmaxXent;
        n.in0 = logits;
        n.label = label;
        double m = -std::numeric_limits<double>::infinity();
        for (double v : z.data) m = std::max(m, v);
        double lse = 0.0;
        for (double v : z.data) lse += std::exp(v - m);
        n.value = RealTensor({1}, {std::log(lse) + m - z[static_cast<std::size_t>(label)]});
        return push(std::move(n));
    }

    std::size_t size() const { return nodes_.size(); }
    const std::vector<NodeId>& parameters() const { return params_; }

    const RealTensor& value(NodeId id) const {
        check_id(id, "value");
        return nodes_[static_cast<std::size_t>(id)].value;
    }

    // Overwrite a parameter leaf in place (same shape), e.g. between
    // finite-difference probes.  Downstream values are NOT recomputed.
    void set_parameter(NodeId id, const RealTensor& v) {
        check_id(id, "set_parameter");
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.op != Op::kParam) throw std::invalid_argument("set_parameter: node is not a parameter");
        if (n.value.shape != v.shape)
            throw std::invalid_argument("set_parameter: shape mismatch " + shape_str(n.value.shape) + " vs " +
                                        shape_str(v.shape));
        n.value = v;
    }

    GradientMap backprop(NodeId out, const RealTensor& seed) const {
        check_id(out, "backprop");
        if (seed.shape != value(out).shape)
            throw std::invalid_argument("backprop: seed shape " + shape_str(seed.shape) +
                                        " does not match output " + shape_str(value(out).shape));
        std::vector<RealTensor> grads(nodes_.size());
        grads[static_cast<std::size_t>(out)] = seed;
        for (NodeId id = out; id >= 0; --id) {
            const std::size_t i = static_cast<std::size_t>(id);
            if (grads[i].empty()) continue;
            backward_node(nodes_[i], grads[i], grads);
        }
        // Only parameters are differentiable leaves; gradients that flowed into
        // constants or interior nodes are scratch space, not part of the result.
        GradientMap gm;
        for (std::size_t i = 0; i < grads.size(); ++i)
            if (nodes_[i].op == Op::kParam && !grads[i].empty())
                gm.grads_.emplace(static_cast<NodeId>(i), std::move(grads[i]));
        return gm;
    }

    // Recompute every non-leaf value from the leaves and compare with the
    // recorded values; true only on a bitwise match.
    bool replay_matches() const {
        std::vector<RealTensor> vals(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const Node& n = nodes_[i];
            if (n.op == Op::kConst || n.op == Op::kParam) {
                vals[i] = n.value;
                continue;
            }
            vals[i] = recompute(n, vals);
            if (vals[i].shape != n.value.shape) return false;
            if (std::memcmp(vals[i].data.data(), n.value.data.data(),
                            vals[i].numel() * sizeof(double)) != 0)
                return false;
        }
        return true;
    }

  private:
    std::vector<Node> nodes_;
    std::vector<NodeId> params_;

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void check_id(NodeId id, const char* what) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw std::invalid_argument(std::string(what) + ": invalid node id " + std::to_string(id));
    }

    NodeId binary(Op op, NodeId a, NodeId b) {
        const char* what = op == Op::kAdd ? "add" : "mul";
        check_id(a, what);
        check_id(b, what);
        const RealTensor& va = value(a);
        const RealTensor& vb = value(b);
        if (!broadcast_compatible(va.shape, vb.shape))
            throw std::invalid_argument(std::string(what) + ": shapes " + shape_str(va.shape) + " and " +
                                        shape_str(vb.shape) + " do not broadcast");
        Node n;
        n.op = op;
        n.in0 = a;
        n.in1 = b;
        n.value = op == Op::kAdd ? broadcast_binary(va, vb, [](double x, double y) { return x + y; })
                                 : broadcast_binary(va, vb, [](double x, double y) { return x * y; });
        return push(std::move(n));
    }

    static RealTensor materialize_stacked(const RealTensor& bank_params, const GroupAssignment& asg) {
        SpectralBank bank;
        bank.params = bank_params;
        const std::size_t kernel_size = static_cast<std::size_t>(asg.table.k) * asg.table.k *
                                        static_cast<std::size_t>(asg.table.c_in) *
                                        static_cast<std::size_t>(asg.table.c_out);
        RealTensor out({static_cast<std::size_t>(asg.group_count), kernel_size});
        for (int g = 0; g < asg.group_count; ++g) {
            const RealTensor w = materialize_group(bank, asg, g);
            std::copy(w.data.begin(), w.data.end(),
                      out.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(g) * kernel_size));
        }
        return out;
    }

    RealTensor recompute(const Node& n, const std::vector<RealTensor>& vals) const {
        const RealTensor& a = vals[static_cast<std::size_t>(n.in0)];
        switch (n.op) {
            case Op::kAdd:
                return broadcast_binary(a, vals[static_cast<std::size_t>(n.in1)],
                                        [](double x, double y) { return x + y; });
            case Op::kMul:
                return broadcast_binary(a, vals[static_cast<std::size_t>(n.in1)],
                                        [](double x, double y) { return x * y; });
            case Op::kMatmul:
                return matmul2(a, vals[static_cast<std::size_t>(n.in1)]);
            case Op::kConv2d:
                return conv2d_direct(a, vals[static_cast<std::size_t>(n.in1)], n.mode);
            case Op::kGap: {
                RealTensor out({a.shape[0]}, 0.0);
                const double inv = 1.0 / static_cast<double>(a.shape[1] * a.shape[2]);
                for (std::size_t c = 0; c < a.shape[0]; ++c) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < a.shape[1] * a.shape[2]; ++i)
                        s += a.data[c * a.shape[1] * a.shape[2] + i];
                    out[c] = s * inv;
                }
                return out;
            }
            case Op::kRelu: {
                RealTensor out = a;
                for (double& v : out.data) v = v > 0.0 ? v : 0.0;
                return out;
            }
            case Op::kSigmoid: {
                RealTensor out = a;
                for (double& v : out.data) v = fdconv::sigmoid(v);
                return out;
            }
            case Op::kSoftmax:
                return softmax_vec(a, n.scalar);
            case Op::kReshape:
                return RealTensor(n.value.shape, a.data);
            case Op::kBandFilter:
                return fdconv::band_filter(a, *n.mask);
            case Op::kFdwMaterialize:
                return materialize_stacked(a, *n.groups);
            case Op::kSum: {
                double s = 0.0;
                for (double v : a.data) s += v;
                return RealTensor({1}, {s});
            }
            case Op::kScale:
                return scaled(a, n.scalar);
            case Op::kSoftmaxXent: {
                double m = -std::numeric_limits<double>::infinity();
                for (double v : a.data) m = std::max(m, v);
                double lse = 0.0;
                for (double v : a.data) lse += std::exp(v - m);
                return RealTensor({1}, {std::log(lse) + m - a[static_cast<std::size_t>(n.label)]});
            }
            case Op::kConst:
            case Op::kParam:
                break;
        }
        throw std::runtime_error("recompute: unreachable op");
    }

    static void accumulate(std::vector<RealTensor>& grads, NodeId id, const RealTensor& g) {
        RealTensor& slot = grads[static_cast<std::size_t>(id)];
        if (slot.empty())
            slot = g;
        else
            add_inplace(slot, g);
    }

    void backward_node(const Node& n, const RealTensor& g, std::vector<RealTensor>& grads) const {
        switch (n.op) {
            case Op::kConst:
            case Op::kParam:
                return;
            case Op::kAdd: {
                accumulate(grads, n.in0, reduce_to_shape(g, value(n.in0).shape));
                accumulate(grads, n.in1, reduce_to_shape(g, value(n.in1).shape));
                return;
            }
            case Op::kMul: {
                const RealTensor& a = value(n.in0);
                const RealTensor& b = value(n.in1);
                accumulate(grads, n.in0,
                           reduce_to_shape(broadcast_binary(g, b, [](double x, double y) { return x * y; }),
                                           a.shape));
                accumulate(grads, n.in1,
                           reduce_to_shape(broadcast_binary(g, a, [](double x, double y) { return x * y; }),
                                           b.shape));
                return;
            }
            case Op::kMatmul: {
                accumulate(grads, n.in0, matmul2(g, transpose2(value(n.in1))));
                accumulate(grads, n.in1, matmul2(transpose2(value(n.in0)), g));
                return;
            }
            case Op::kConv2d: {
                const RealTensor& x = value(n.in0);
                const RealTensor& w = value(n.in1);
                accumulate(grads, n.in0,
                           conv2d_grad_input(g, w, n.mode, x.shape[0], x.shape[1], x.shape[2]));
                accumulate(grads, n.in1, conv2d_grad_weight(g, x, w.shape[0], n.mode));
                return;
            }
            case Op::kGap: {
                const RealTensor& x = value(n.in0);
                RealTensor gx(x.shape);
                const double inv = 1.0 / static_cast<double>(x.shape[1] * x.shape[2]);
                for (std::size_t c = 0; c < x.shape[0]; ++c)
                    for (std::size_t i = 0; i < x.shape[1] * x.shape[2]; ++i)
                        gx.data[c * x.shape[1] * x.shape[2] + i] = g[c] * inv;
                accumulate(grads, n.in0, gx);
                return;
            }
            case Op::kRelu: {
                const RealTensor& x = value(n.in0);
                RealTensor gx(x.shape);
                for (std::size_t i = 0; i < x.numel(); ++i) gx.data[i] = x.data[i] > 0.0 ? g.data[i] : 0.0;
                accumulate(grads, n.in0, gx);
                return;
            }
            case Op::kSigmoid: {
                RealTensor gx(n.value.shape);
                for (std::size_t i = 0; i < gx.numel(); ++i) {
                    const double y = n.value.data[i];
                    gx.data[i] = g.data[i] * y * (1.0 - y);
                }
                accumulate(grads, n.in0, gx);
                return;
            }
            case Op::kSoftmax: {
                const RealTensor& y = n.value;
                double inner = 0.0;
                for (std::size_t i = 0; i < y.numel(); ++i) inner += g.data[i] * y.data[i];
                RealTensor gx(y.shape);
                for (std::size_t i = 0; i < y.numel(); ++i)
                    gx.data[i] = y.data[i] * (g.data[i] - inner) / n.scalar;
                accumulate(grads, n.in0, gx);
                return;
            }
            case Op::kReshape: {
                accumulate(grads, n.in0, RealTensor(value(n.in0).shape, g.data));
                return;
            }
            case Op::kBandFilter: {
                // The spectral mask operator is self-adjoint.
                accumulate(grads, n.in0, fdconv::band_filter(g, *n.mask));
                return;
            }
            case Op::kFdwMaterialize: {
                const GroupAssignment& asg = *n.groups;
                const std::size_t kernel_size = g.shape[1];
                RealTensor gbank({asg.table.param_total}, 0.0);
                for (int gi = 0; gi < asg.group_count; ++gi) {
                    RealTensor row({static_cast<std::size_t>(asg.table.k),
                                    static_cast<std::size_t>(asg.table.k),
                                    static_cast<std::size_t>(asg.table.c_in),
                                    static_cast<std::size_t>(asg.table.c_out)});
                    std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(gi) * kernel_size),
                              g.data.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(gi) + 1) * kernel_size),
                              row.data.begin());
                    add_inplace(gbank, fdw_adjoint(row, asg, gi));
                }
                accumulate(grads, n.in0, gbank);
                return;
            }
            case Op::kSum: {
                accumulate(grads, n.in0, RealTensor(value(n.in0).shape, g[0]));
                return;
            }
            case Op::kScale: {
                accumulate(grads, n.in0, scaled(g, n.scalar));
                return;
            }
            case Op::kSoftmaxXent: {
                const RealTensor& z = value(n.in0);
                RealTensor p = softmax_vec(z, 1.0);
                p[static_cast<std::size_t>(n.label)] -= 1.0;
                accumulate(grads, n.in0, scaled(p, g[0]));
                return;
            }
        }
    }
};

// --- gradient verification utilities ---------------------------------------

struct FiniteDiffWorst {
    std::size_t param = 0;   // which parameter tensor
    std::size_t index = 0;   // flat coordinate within it
    double analytic = 0.0;
    double numeric = 0.0;
};

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    FiniteDiffWorst worst;
};

// Central-difference check of analytic gradients.  `f` evaluates the scalar
// objective at the given parameter values.  Errors are relative to
// max(1, |analytic|).  A non-finite objective value is reported together with
// the parameter/coordinate being probed.
inline FiniteDiffReport finite_diff_check(const std::function<double(const std::vector<RealTensor>&)>& f,
                                          std::vector<RealTensor> params,
                                          const std::vector<RealTensor>& analytic, double eps,
                                          std::size_t max_coords_per_param =
                                              std::numeric_limits<std::size_t>::max(),
                                          Rng* rng = nullptr) {
    if (!(eps >= 1e-7 && eps <= 1e-3))
        throw std::invalid_argument("finite_diff_check: eps must lie in [1e-7, 1e-3]");
    if (params.size() != analytic.size())
        throw std::invalid_argument("finite_diff_check: " + std::to_string(params.size()) +
                                    " parameters vs " + std::to_string(analytic.size()) + " gradients");
    for (std::size_t p = 0; p < params.size(); ++p)
        if (params[p].shape != analytic[p].shape)
            throw std::invalid_argument("finite_diff_check: gradient " + std::to_string(p) +
                                        " shape mismatch " + shape_str(params[p].shape) + " vs " +
                                        shape_str(analytic[p].shape));

    FiniteDiffReport report;
    for (std::size_t p = 0; p < params.size(); ++p) {
        std::vector<std::size_t> coords;
        const std::size_t n = params[p].numel();
        if (n <= max_coords_per_param) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else if (rng != nullptr) {
            std::vector<std::size_t> all(n);
            for (std::size_t i = 0; i < n; ++i) all[i] = i;
            rng->shuffle(all);
            coords.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(max_coords_per_param));
        } else {
            coords.resize(max_coords_per_param);
            for (std::size_t i = 0; i < max_coords_per_param; ++i) coords[i] = i;
        }

        for (std::size_t idx : coords) {
            const double saved = params[p][idx];
            params[p][idx] = saved + eps;
            const double up = f(params);
            params[p][idx] = saved - eps;
            const double down = f(params);
            params[p][idx] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw std::runtime_error("finite_diff_check: non-finite objective while perturbing parameter " +
                                         std::to_string(p) + " index " + std::to_string(idx));
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[p][idx];
            const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            ++report.checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = {p, idx, a, numeric};
            }
        }
    }
    return report;
}

// Dot-product (adjoint consistency) test: <A x, y> must equal <x, At y> for
// random x, y.  Returns the worst normalized discrepancy over the trials.
inline double adjoint_dot_test(const std::function<RealTensor(const RealTensor&)>& forward,
                               const std::function<RealTensor(const RealTensor&)>& adjoint,
                               const std::vector<std::size_t>& in_shape,
                               const std::vector<std::size_t>& out_shape, int trials, Rng& rng) {
    if (trials < 1) throw std::invalid_argument("adjoint_dot_test: trials must be positive");
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        RealTensor x(in_shape);
        for (double& v : x.data) v = rng.normal();
        RealTensor y(out_shape);
        for (double& v : y.data) v = rng.normal();
        const double lhs = dot(forward(x), y);
        const double rhs = dot(x, adjoint(y));
        const double denom = std::max(1.0, 0.5 * (std::abs(lhs) + std::abs(rhs)));
        worst = std::max(worst, std::abs(lhs - rhs) / denom);
    }
    return worst;
}

}  // namespace fdconv

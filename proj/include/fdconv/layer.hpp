#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdconv/autodiff.hpp"
#include "fdconv/conv.hpp"
#include "fdconv/fbm.hpp"
#include "fdconv/fdw.hpp"
#include "fdconv/ksm.hpp"
#include "fdconv/rng.hpp"
#include "fdconv/tensor.hpp"

namespace fdconv {

// A frequency-dynamic convolution layer: n spectral-disjoint candidate
// kernels (one shared bank), an attention head selecting their mixture per
// input, and optional kernel-gate (KSM) and band-modulation (FBM) stages.

struct FDConvConfig {
    int k = 3;
    int c_in = 1;
    int c_out = 8;
    int n = 8;
    double tau = 1.0;
    std::vector<double> bands = {0.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0};
    bool enable_ksm = true;
    bool enable_fbm = true;
    std::uint64_t seed = 0;

    std::size_t band_count() const { return bands.size() - 1; }
};

inline void validate_config(const FDConvConfig& c) {
    if (c.k < 1 || c.k % 2 == 0)
        throw std::invalid_argument("config: kernel extent must be odd and positive, got " +
                                    std::to_string(c.k));
    if (c.c_in < 1 || c.c_out < 1) throw std::invalid_argument("config: channel counts must be positive");
    if (c.n < 1) throw std::invalid_argument("config: kernel count must be positive, got " +
                                             std::to_string(c.n));
    if (!(c.tau > 0.0) || !std::isfinite(c.tau))
        throw std::invalid_argument("config: softmax temperature must be positive and finite");
    check_band_thresholds(c.bands);
}

struct AttentionParams {
    RealTensor fc1_w;  // (c_in, hidden)
    RealTensor fc1_b;  // (hidden)
    RealTensor fc2_w;  // (hidden, n)
    RealTensor fc2_b;  // (n)
};

struct LayerState {
    FDConvConfig config;
    GroupAssignment assignment;
    SpectralBank bank;
    AttentionParams attention;
    KsmParams ksm;
    FbmParams fbm;
};

// Parameter budget per stage.  The kernel bank is k*k*C_in*C_out reals no
// matter how many kernels it is split into.
struct ParamCount {
    std::size_t bank = 0, attention = 0, ksm = 0, fbm = 0;
    std::size_t total() const { return bank + attention + ksm + fbm; }
};

inline ParamCount param_count(const FDConvConfig& c) {
    validate_config(c);
    const std::size_t k = static_cast<std::size_t>(c.k);
    const std::size_t ci = static_cast<std::size_t>(c.c_in), co = static_cast<std::size_t>(c.c_out);
    const std::size_t h = ksm_hidden_width(c.c_in);
    const std::size_t n = static_cast<std::size_t>(c.n);
    ParamCount p;
    p.bank = k * k * ci * co;
    p.attention = ci * h + h + h * n + n;
    if (c.enable_ksm) {
        const std::size_t fanout = ci + co + k * k;
        p.ksm = 3 * k * k * co + ci * h + h + h * fanout + fanout;
    }
    if (c.enable_fbm) {
        const std::size_t planes = c.band_count() - 1;
        p.fbm = 9 * ci * planes + planes;
    }
    return p;
}

// Deterministic init.  Draw order from one seeded stream: bank spectrum,
// attention fc1, KSM fc1.  Every head that feeds a gate or the mixture
// softmax starts at zero, so the layer begins as an exact identity mixture:
// uniform attention, unit gates.
inline LayerState init_layer_state(const FDConvConfig& config) {
    validate_config(config);
    LayerState s;
    s.config = config;
    const IndexTable table = build_index_table(config.k, config.c_in, config.c_out);
    s.assignment = assign_groups(table, config.n);

    Rng rng(config.seed);
    s.bank = init_spectral_bank(table, rng);

    const std::size_t hidden = ksm_hidden_width(config.c_in);
    s.attention.fc1_w = RealTensor({static_cast<std::size_t>(config.c_in), hidden});
    const double stddev = std::sqrt(2.0 / static_cast<double>(config.c_in));
    for (double& v : s.attention.fc1_w.data) v = rng.normal(0.0, stddev);
    s.attention.fc1_b = RealTensor({hidden}, 0.0);
    s.attention.fc2_w = RealTensor({hidden, static_cast<std::size_t>(config.n)}, 0.0);
    s.attention.fc2_b = RealTensor({static_cast<std::size_t>(config.n)}, 0.0);

    s.ksm = init_ksm_params(config.k, config.c_in, config.c_out, rng);
    s.fbm = init_fbm_params(config.c_in, config.bands.size() - 1);
    return s;
}

inline RealTensor attention_pi(const RealTensor& descriptor, const AttentionParams& a, double tau) {
    const std::size_t hidden = a.fc1_b.numel();
    if (a.fc1_w.rank() != 2 || a.fc1_w.shape[0] != descriptor.numel() || a.fc1_w.shape[1] != hidden)
        throw std::invalid_argument("attention_pi: descriptor length " + std::to_string(descriptor.numel()) +
                                    " vs fc1 " + shape_str(a.fc1_w.shape));
    RealTensor h({hidden});
    for (std::size_t j = 0; j < hidden; ++j) {
        double s = a.fc1_b[j];
        for (std::size_t i = 0; i < descriptor.numel(); ++i) s += descriptor[i] * a.fc1_w(i, j);
        h[j] = s > 0.0 ? s : 0.0;
    }
    const std::size_t n = a.fc2_b.numel();
    RealTensor z({n});
    for (std::size_t j = 0; j < n; ++j) {
        double s = a.fc2_b[j];
        for (std::size_t i = 0; i < hidden; ++i) s += h[i] * a.fc2_w(i, j);
        z[j] = s;
    }
    return softmax_vec(z, tau);
}

// Input-independent work shared across samples: materialized kernels and the
// band masks for a fixed spatial extent.
struct MaterializedLayer {
    std::vector<RealTensor> weights;
    BandMaskSet masks;
};

inline MaterializedLayer precompute_layer(const LayerState& s, std::size_t height, std::size_t width) {
    MaterializedLayer m;
    m.weights = materialize_weights(s.bank, s.assignment);
    if (s.config.enable_fbm) m.masks = build_band_masks(height, width, s.config.bands);
    return m;
}

inline RealTensor fdconv_forward(const RealTensor& x, const LayerState& s, const MaterializedLayer& pre) {
    if (x.rank() != 3 || x.shape[0] != static_cast<std::size_t>(s.config.c_in))
        throw std::invalid_argument("fdconv_forward: input " + shape_str(x.shape) + " does not match c_in " +
                                    std::to_string(s.config.c_in));
    const RealTensor d = channel_descriptor(x);
    const RealTensor pi = attention_pi(d, s.attention, s.config.tau);
    RealTensor w = mix_weights(pre.weights, pi);
    if (s.config.enable_ksm) w = apply_modulation(w, ksm_alpha(d, s.ksm));
    if (!s.config.enable_fbm) return conv2d_direct(x, w, ConvMode::kCircular);
    const RealTensor a = predict_modulation(x, s.fbm, s.config.band_count());
    return fbm_forward(x, w, a, pre.masks);
}

inline RealTensor fdconv_forward(const RealTensor& x, const LayerState& s) {
    if (x.rank() != 3) throw std::invalid_argument("fdconv_forward: input must be (C,H,W)");
    return fdconv_forward(x, s, precompute_layer(s, x.shape[1], x.shape[2]));
}

// --- tape composition -------------------------------------------------------
//
// The same layer recorded onto a Tape for training.  Constant plumbing
// (selector matrices, shifts, masks) is created once per tape and reused by
// every sample.

struct LayerParamNodes {
    NodeId bank = -1;
    NodeId attn_fc1_w = -1, attn_fc1_b = -1, attn_fc2_w = -1, attn_fc2_b = -1;
    NodeId ksm_local_w = -1, ksm_fc1_w = -1, ksm_fc1_b = -1, ksm_fc2_w = -1, ksm_fc2_b = -1;
    NodeId fbm_conv_w = -1, fbm_conv_b = -1;
};

struct LayerTapeCtx {
    const LayerState* state = nullptr;
    std::size_t height = 0, width = 0;
    LayerParamNodes params;
    NodeId stacked = -1;  // (n, k*k*c_in*c_out) materialized kernels
    NodeId local_row_sel[3] = {-1, -1, -1};
    NodeId shift_mat[3] = {-1, -1, -1};  // descriptor shifts; center tap needs none
    NodeId sel_in = -1, sel_out = -1, sel_sp = -1;
    std::vector<NodeId> band_plane_sel;
    std::vector<std::shared_ptr<const RealTensor>> masks;
};

inline LayerTapeCtx begin_layer_tape(Tape& tape, const LayerState& s, std::size_t height,
                                     std::size_t width) {
    LayerTapeCtx ctx;
    ctx.state = &s;
    ctx.height = height;
    ctx.width = width;

    ctx.params.bank = tape.parameter(s.bank.params);
    ctx.params.attn_fc1_w = tape.parameter(s.attention.fc1_w);
    ctx.params.attn_fc1_b = tape.parameter(s.attention.fc1_b);
    ctx.params.attn_fc2_w = tape.parameter(s.attention.fc2_w);
    ctx.params.attn_fc2_b = tape.parameter(s.attention.fc2_b);

    ctx.stacked = tape.fdw_materialize(ctx.params.bank, std::make_shared<GroupAssignment>(s.assignment));

    const std::size_t k = static_cast<std::size_t>(s.config.k);
    const std::size_t ci = static_cast<std::size_t>(s.config.c_in);
    const std::size_t co = static_cast<std::size_t>(s.config.c_out);

    if (s.config.enable_ksm) {
        ctx.params.ksm_local_w = tape.parameter(s.ksm.local_w);
        ctx.params.ksm_fc1_w = tape.parameter(s.ksm.g_fc1_w);
        ctx.params.ksm_fc1_b = tape.parameter(s.ksm.g_fc1_b);
        ctx.params.ksm_fc2_w = tape.parameter(s.ksm.g_fc2_w);
        ctx.params.ksm_fc2_b = tape.parameter(s.ksm.g_fc2_b);

        for (int t = 0; t < 3; ++t) {
            RealTensor sel({1, 3}, 0.0);
            sel[static_cast<std::size_t>(t)] = 1.0;
            ctx.local_row_sel[t] = tape.constant(std::move(sel));
            if (t == 1) continue;  // identity shift
            RealTensor shift({ci, ci}, 0.0);
            for (std::size_t j = 0; j < ci; ++j) {
                const int src = static_cast<int>(j) + t - 1;
                if (src >= 0 && src < static_cast<int>(ci)) shift(static_cast<std::size_t>(src), j) = 1.0;
            }
            ctx.shift_mat[t] = tape.constant(std::move(shift));
        }

        const std::size_t fanout = ci + co + k * k;
        RealTensor sin({fanout, ci}, 0.0), sout({fanout, co}, 0.0), ssp({fanout, k * k}, 0.0);
        for (std::size_t i = 0; i < ci; ++i) sin(i, i) = 1.0;
        for (std::size_t i = 0; i < co; ++i) sout(ci + i, i) = 1.0;
        for (std::size_t i = 0; i < k * k; ++i) ssp(ci + co + i, i) = 1.0;
        ctx.sel_in = tape.constant(std::move(sin));
        ctx.sel_out = tape.constant(std::move(sout));
        ctx.sel_sp = tape.constant(std::move(ssp));
    }

    if (s.config.enable_fbm) {
        ctx.params.fbm_conv_w = tape.parameter(s.fbm.conv_w);
        ctx.params.fbm_conv_b = tape.parameter(s.fbm.conv_b);
        const BandMaskSet set = build_band_masks(height, width, s.config.bands);
        for (const RealTensor& m : set.masks) ctx.masks.push_back(std::make_shared<RealTensor>(m));
        const std::size_t planes = set.band_count() - 1;
        for (std::size_t b = 0; b < planes; ++b) {
            RealTensor sel({1, planes}, 0.0);
            sel[b] = 1.0;
            ctx.band_plane_sel.push_back(tape.constant(std::move(sel)));
        }
    }
    return ctx;
}

inline NodeId layer_forward_on_tape(Tape& tape, const LayerTapeCtx& ctx, NodeId x) {
    const LayerState& s = *ctx.state;
    const std::size_t k = static_cast<std::size_t>(s.config.k);
    const std::size_t ci = static_cast<std::size_t>(s.config.c_in);
    const std::size_t co = static_cast<std::size_t>(s.config.c_out);
    const std::size_t hidden = ksm_hidden_width(s.config.c_in);
    const std::size_t n = static_cast<std::size_t>(s.config.n);

    const NodeId d = tape.reshape(tape.gap(x), {1, ci});

    // Attention over the kernel bank.
    const NodeId ah = tape.relu(tape.add(tape.matmul(d, ctx.params.attn_fc1_w),
                                         tape.reshape(ctx.params.attn_fc1_b, {1, hidden})));
    const NodeId az = tape.add(tape.matmul(ah, ctx.params.attn_fc2_w),
                               tape.reshape(ctx.params.attn_fc2_b, {1, n}));
    const NodeId pi = tape.reshape(tape.softmax(tape.reshape(az, {n}), s.config.tau), {1, n});
    NodeId w = tape.reshape(tape.matmul(pi, ctx.stacked), {k, k, ci, co});

    if (s.config.enable_ksm) {
        NodeId local = -1;
        for (int t = 0; t < 3; ++t) {
            const NodeId row =
                tape.reshape(tape.matmul(ctx.local_row_sel[t], ctx.params.ksm_local_w), {k, k, 1, co});
            const NodeId dt = t == 1 ? d : tape.matmul(d, ctx.shift_mat[t]);
            const NodeId term = tape.mul(row, tape.reshape(dt, {1, 1, ci, 1}));
            local = t == 0 ? term : tape.add(local, term);
        }
        const NodeId gh = tape.relu(tape.add(tape.matmul(d, ctx.params.ksm_fc1_w),
                                             tape.reshape(ctx.params.ksm_fc1_b, {1, hidden})));
        const std::size_t fanout = ci + co + k * k;
        const NodeId gz = tape.add(tape.matmul(gh, ctx.params.ksm_fc2_w),
                                   tape.reshape(ctx.params.ksm_fc2_b, {1, fanout}));
        const NodeId g_in = tape.reshape(tape.matmul(gz, ctx.sel_in), {1, 1, ci, 1});
        const NodeId g_out = tape.reshape(tape.matmul(gz, ctx.sel_out), {1, 1, 1, co});
        const NodeId g_sp = tape.reshape(tape.matmul(gz, ctx.sel_sp), {k, k, 1, 1});
        const NodeId alpha =
            tape.scale(tape.sigmoid(tape.add(tape.add(tape.add(local, g_in), g_out), g_sp)), 2.0);
        w = tape.mul(w, alpha);
    }

    if (!s.config.enable_fbm) return tape.conv2d(x, w, ConvMode::kCircular);

    const std::size_t planes = s.config.band_count() - 1;
    const NodeId logits = tape.conv2d(x, ctx.params.fbm_conv_w, ConvMode::kZeroPad);
    const NodeId gates = tape.sigmoid(
        tape.add(logits, tape.reshape(ctx.params.fbm_conv_b, {planes, 1, 1})));
    const NodeId flat = tape.reshape(gates, {planes, ctx.height * ctx.width});
    NodeId mixed = tape.band_filter(x, ctx.masks[0]);  // band 0 passes unmodulated
    for (std::size_t b = 1; b <= planes; ++b) {
        const NodeId plane =
            tape.reshape(tape.matmul(ctx.band_plane_sel[b - 1], flat), {1, ctx.height, ctx.width});
        const NodeId xb = tape.band_filter(x, ctx.masks[b]);
        mixed = tape.add(mixed, tape.mul(plane, xb));
    }
    return tape.conv2d(mixed, w, ConvMode::kCircular);
}

// Write updated tensor values back into the layer state after an optimizer
// step, in the same order begin_layer_tape registered them.
inline void layer_apply_values(LayerState& s, const Tape& tape, const LayerParamNodes& p) {
    s.bank.params = tape.value(p.bank);
    s.attention.fc1_w = tape.value(p.attn_fc1_w);
    s.attention.fc1_b = tape.value(p.attn_fc1_b);
    s.attention.fc2_w = tape.value(p.attn_fc2_w);
    s.attention.fc2_b = tape.value(p.attn_fc2_b);
    if (s.config.enable_ksm) {
        s.ksm.local_w = tape.value(p.ksm_local_w);
        s.ksm.g_fc1_w = tape.value(p.ksm_fc1_w);
        s.ksm.g_fc1_b = tape.value(p.ksm_fc1_b);
        s.ksm.g_fc2_w = tape.value(p.ksm_fc2_w);
        s.ksm.g_fc2_b = tape.value(p.ksm_fc2_b);
    }
    if (s.config.enable_fbm) {
        s.fbm.conv_w = tape.value(p.fbm_conv_w);
        s.fbm.conv_b = tape.value(p.fbm_conv_b);
    }
}

}  // namespace fdconv

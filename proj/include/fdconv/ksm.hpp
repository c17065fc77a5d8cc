#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "fdconv/rng.hpp"
#include "fdconv/tensor.hpp"

namespace fdconv {

// Kernel spatial modulation: from the channel-mean descriptor of an input, a
// local branch predicts one logit per kernel entry (dense, via a width-3
// one-dimensional conv over the descriptor) and a global branch predicts
// per-input-channel, per-output-channel and per-spatial-position logits that
// broadcast over the rest.  Fused gate: alpha = 2*sigmoid(local + broadcasts),
// elementwise in (0, 2).  All stages except the first global layer start at
// zero, so a fresh module is an exact identity (alpha == 1).

struct KsmParams {
    int k = 0, c_in = 0, c_out = 0;
    RealTensor local_w;  // (3, k*k*c_out): tap, flattened (kernel entry, out channel)
    RealTensor g_fc1_w;  // (c_in, hidden)
    RealTensor g_fc1_b;  // (hidden)
    RealTensor g_fc2_w;  // (hidden, c_in + c_out + k*k)
    RealTensor g_fc2_b;  // (c_in + c_out + k*k)
};

inline std::size_t ksm_hidden_width(int c_in) {
    return static_cast<std::size_t>(std::max(1, c_in / 16));
}

inline KsmParams init_ksm_params(int k, int c_in, int c_out, Rng& rng) {
    if (k < 1 || c_in < 1 || c_out < 1) throw std::invalid_argument("init_ksm_params: bad dimensions");
    const std::size_t hidden = ksm_hidden_width(c_in);
    const std::size_t fanout = static_cast<std::size_t>(c_in) + static_cast<std::size_t>(c_out) +
                               static_cast<std::size_t>(k) * static_cast<std::size_t>(k);
    KsmParams p;
    p.k = k;
    p.c_in = c_in;
    p.c_out = c_out;
    p.local_w = RealTensor({3, static_cast<std::size_t>(k) * k * static_cast<std::size_t>(c_out)}, 0.0);
    p.g_fc1_w = RealTensor({static_cast<std::size_t>(c_in), hidden});
    const double stddev = std::sqrt(2.0 / static_cast<double>(c_in));
    for (double& v : p.g_fc1_w.data) v = rng.normal(0.0, stddev);
    p.g_fc1_b = RealTensor({hidden}, 0.0);
    p.g_fc2_w = RealTensor({hidden, fanout}, 0.0);
    p.g_fc2_b = RealTensor({fanout}, 0.0);
    return p;
}

inline void check_ksm_params(const KsmParams& p, const char* what) {
    const std::size_t k = static_cast<std::size_t>(p.k);
    const std::size_t hidden = ksm_hidden_width(p.c_in);
    const std::size_t fanout = static_cast<std::size_t>(p.c_in) + static_cast<std::size_t>(p.c_out) + k * k;
    if (p.local_w.shape != std::vector<std::size_t>{3, k * k * static_cast<std::size_t>(p.c_out)} ||
        p.g_fc1_w.shape != std::vector<std::size_t>{static_cast<std::size_t>(p.c_in), hidden} ||
        p.g_fc1_b.shape != std::vector<std::size_t>{hidden} ||
        p.g_fc2_w.shape != std::vector<std::size_t>{hidden, fanout} ||
        p.g_fc2_b.shape != std::vector<std::size_t>{fanout})
        throw std::invalid_argument(std::string(what) + ": inconsistent parameter shapes for k=" +
                                    std::to_string(p.k) + ", c_in=" + std::to_string(p.c_in) +
                                    ", c_out=" + std::to_string(p.c_out));
}

// Spatial mean of each channel.
inline RealTensor channel_descriptor(const RealTensor& x) {
    if (x.rank() != 3)
        throw std::invalid_argument("channel_descriptor: input must be (C,H,W), got " + shape_str(x.shape));
    RealTensor d({x.shape[0]}, 0.0);
    const std::size_t hw = x.shape[1] * x.shape[2];
    for (std::size_t c = 0; c < x.shape[0]; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += x.data[c * hw + i];
        d[c] = s / static_cast<double>(hw);
    }
    return d;
}

// Width-3 conv along the descriptor, zero padded: position ci sees
// d[ci-1..ci+1] and emits one logit per (kernel entry, output channel).
inline RealTensor ksm_local_logits(const RealTensor& d, const KsmParams& p) {
    check_ksm_params(p, "ksm_local_logits");
    if (d.numel() != static_cast<std::size_t>(p.c_in))
        throw std::invalid_argument("ksm_local_logits: descriptor length " + std::to_string(d.numel()) +
                                    " vs c_in " + std::to_string(p.c_in));
    const std::size_t k = static_cast<std::size_t>(p.k);
    const std::size_t c_out = static_cast<std::size_t>(p.c_out);
    RealTensor out({k, k, static_cast<std::size_t>(p.c_in), c_out}, 0.0);
    for (std::size_t ci = 0; ci < static_cast<std::size_t>(p.c_in); ++ci)
        for (int t = 0; t < 3; ++t) {
            const int src = static_cast<int>(ci) + t - 1;
            if (src < 0 || src >= p.c_in) continue;
            const double dv = d[static_cast<std::size_t>(src)];
            for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < k; ++b)
                    for (std::size_t co = 0; co < c_out; ++co)
                        out(a, b, ci, co) +=
                            p.local_w(static_cast<std::size_t>(t), (a * k + b) * c_out + co) * dv;
        }
    return out;
}

struct KsmGlobalLogits {
    RealTensor in_channel;   // (c_in)
    RealTensor out_channel;  // (c_out)
    RealTensor spatial;      // (k*k), row-major kernel entries
};

inline KsmGlobalLogits ksm_global_logits(const RealTensor& d, const KsmParams& p) {
    check_ksm_params(p, "ksm_global_logits");
    if (d.numel() != static_cast<std::size_t>(p.c_in))
        throw std::invalid_argument("ksm_global_logits: descriptor length " + std::to_string(d.numel()) +
                                    " vs c_in " + std::to_string(p.c_in));
    const std::size_t hidden = ksm_hidden_width(p.c_in);
    RealTensor h({hidden}, 0.0);
    for (std::size_t j = 0; j < hidden; ++j) {
        double s = p.g_fc1_b[j];
        for (std::size_t i = 0; i < d.numel(); ++i) s += d[i] * p.g_fc1_w(i, j);
        h[j] = s > 0.0 ? s : 0.0;
    }
    const std::size_t fanout = p.g_fc2_b.numel();
    RealTensor z({fanout});
    for (std::size_t j = 0; j < fanout; ++j) {
        double s = p.g_fc2_b[j];
        for (std::size_t i = 0; i < hidden; ++i) s += h[i] * p.g_fc2_w(i, j);
        z[j] = s;
    }
    KsmGlobalLogits out;
    const std::size_t ci = static_cast<std::size_t>(p.c_in), co = static_cast<std::size_t>(p.c_out);
    out.in_channel = RealTensor({ci});
    out.out_channel = RealTensor({co});
    out.spatial = RealTensor({static_cast<std::size_t>(p.k) * static_cast<std::size_t>(p.k)});
    for (std::size_t i = 0; i < ci; ++i) out.in_channel[i] = z[i];
    for (std::size_t i = 0; i < co; ++i) out.out_channel[i] = z[ci + i];
    for (std::size_t i = 0; i < out.spatial.numel(); ++i) out.spatial[i] = z[ci + co + i];
    return out;
}

// alpha(a,b,ci,co) = 2*sigmoid(local + g_in[ci] + g_out[co] + g_sp[a*k+b]).
inline RealTensor ksm_fuse(const RealTensor& local, const KsmGlobalLogits& global) {
    if (local.rank() != 4)
        throw std::invalid_argument("ksm_fuse: local logits must be (k,k,C_in,C_out), got " +
                                    shape_str(local.shape));
    const std::size_t k = local.shape[0], c_in = local.shape[2], c_out = local.shape[3];
    if (global.in_channel.numel() != c_in || global.out_channel.numel() != c_out ||
        global.spatial.numel() != k * k)
        throw std::invalid_argument("ksm_fuse: global logit sizes do not match local logits " +
                                    shape_str(local.shape));
    RealTensor alpha(local.shape);
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b)
            for (std::size_t ci = 0; ci < c_in; ++ci)
                for (std::size_t co = 0; co < c_out; ++co)
                    alpha(a, b, ci, co) = 2.0 * sigmoid(local(a, b, ci, co) + global.in_channel[ci] +
                                                        global.out_channel[co] + global.spatial[a * k + b]);
    return alpha;
}

inline RealTensor ksm_alpha(const RealTensor& descriptor, const KsmParams& p) {
    return ksm_fuse(ksm_local_logits(descriptor, p), ksm_global_logits(descriptor, p));
}

inline RealTensor apply_modulation(const RealTensor& w, const RealTensor& alpha) {
    if (w.shape != alpha.shape)
        throw std::invalid_argument("apply_modulation: weight " + shape_str(w.shape) + " vs gate " +
                                    shape_str(alpha.shape));
    RealTensor out(w.shape);
    for (std::size_t i = 0; i < w.numel(); ++i) out.data[i] = w.data[i] * alpha.data[i];
    return out;
}

}  // namespace fdconv

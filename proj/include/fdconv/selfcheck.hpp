#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fdconv/analysis.hpp"
#include "fdconv/autodiff.hpp"
#include "fdconv/conv.hpp"
#include "fdconv/dft.hpp"
#include "fdconv/fbm.hpp"
#include "fdconv/fdw.hpp"
#include "fdconv/ksm.hpp"
#include "fdconv/layer.hpp"
#include "fdconv/rng.hpp"
#include "fdconv/tensor.hpp"

namespace fdconv {

// Fast structural self-checks for the `check` CLI subcommand: each suite
// exercises one subsystem's invariants and reports a measured residual next
// to the bound it must stay under.

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace detail {

inline CheckResult check_against(const std::string& name, double measured, double bound) {
    CheckResult r;
    r.name = name;
    r.pass = measured <= bound;
    r.detail = "measured " + format_g17(measured) + ", bound " + format_g17(bound);
    return r;
}

}  // namespace detail

inline std::vector<CheckResult> selfcheck_numerics() {
    std::vector<CheckResult> out;
    Rng rng(101);

    double worst = 0.0;
    for (std::size_t extent : {8u, 12u, 16u}) {
        RealTensor x({extent, extent});
        for (double& v : x.data) v = rng.normal();
        const ComplexGrid back = idft2(dft2(x));
        for (std::size_t i = 0; i < back.numel(); ++i) {
            worst = std::max(worst, std::abs(back.data[i].real() - x.data[i]));
            worst = std::max(worst, std::abs(back.data[i].imag()));
        }
    }
    out.push_back(detail::check_against("transform round trip", worst, 1e-11));

    worst = 0.0;
    for (int trial = 0; trial < 8; ++trial) {
        RealTensor x({2, 10, 10}), w({3, 3, 2, 3});
        for (double& v : x.data) v = rng.normal();
        for (double& v : w.data) v = rng.normal();
        worst = std::max(worst, max_abs_diff(conv2d_fft(x, w), conv2d_direct(x, w, ConvMode::kCircular)));
    }
    out.push_back(detail::check_against("spectral vs direct convolution", worst, 1e-10));

    RealTensor x({16, 16});
    for (double& v : x.data) v = rng.normal();
    const ComplexGrid spec = dft2(x);
    double spatial = 0.0, spectral = 0.0;
    for (double v : x.data) spatial += v * v;
    for (const Complex& c : spec.data) spectral += std::norm(c);
    spectral /= static_cast<double>(spec.numel());
    out.push_back(detail::check_against("energy conservation", std::abs(spatial - spectral),
                                        1e-10 * std::max(1.0, spatial)));
    return out;
}

inline std::vector<CheckResult> selfcheck_fdw() {
    std::vector<CheckResult> out;
    Rng rng(102);

    bool budget_ok = true;
    const IndexTable table = build_index_table(3, 2, 4);
    for (int n : {1, 2, 4, 8}) {
        const GroupAssignment asg = assign_groups(table, n);
        std::size_t total = 0, lo = table.param_total, hi = 0;
        for (int g = 0; g < n; ++g) {
            total += asg.group_param_count[static_cast<std::size_t>(g)];
            lo = std::min(lo, asg.group_param_count[static_cast<std::size_t>(g)]);
            hi = std::max(hi, asg.group_param_count[static_cast<std::size_t>(g)]);
        }
        budget_ok = budget_ok && total == table.param_total && hi - lo <= 2;
    }
    CheckResult budget;
    budget.name = "parameter budget and balance";
    budget.pass = budget_ok;
    budget.detail = budget_ok ? "coefficient count conserved for n in {1,2,4,8}, spread <= 2"
                              : "group sizes violate the budget";
    out.push_back(budget);

    SpectralBank bank;
    bank.params = RealTensor({table.param_total});
    for (double& v : bank.params.data) v = rng.normal();
    const GroupAssignment asg = assign_groups(table, 8);
    const std::vector<RealTensor> w = materialize_weights(bank, asg);
    out.push_back(detail::check_against("kernel orthogonality",
                                        pairwise_cosine_similarity(w).max_offdiag_abs, 1e-10));
    out.push_back(
        detail::check_against("spectral support disjointness", max_native_spectrum_overlap(w), 1e-12));

    double adjoint_worst = 0.0;
    for (int g = 0; g < 8; ++g) {
        RealTensor grad(w[static_cast<std::size_t>(g)].shape);
        for (double& v : grad.data) v = rng.normal();
        const double lhs = dot(w[static_cast<std::size_t>(g)], grad);
        const double rhs = dot(bank.params, fdw_adjoint(grad, asg, g));
        adjoint_worst = std::max(adjoint_worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    }
    out.push_back(detail::check_against("materialization adjoint", adjoint_worst, 1e-10));
    return out;
}

inline std::vector<CheckResult> selfcheck_ksm() {
    std::vector<CheckResult> out;
    Rng rng(103);
    const KsmParams fresh = init_ksm_params(3, 4, 6, rng);
    RealTensor d({4});
    for (double& v : d.data) v = rng.normal();
    const RealTensor alpha = ksm_alpha(d, fresh);
    double unit_err = 0.0;
    for (double v : alpha.data) unit_err = std::max(unit_err, std::abs(v - 1.0));
    out.push_back(detail::check_against("fresh gates are exactly one", unit_err, 0.0));

    KsmParams wild = fresh;
    for (double& v : wild.local_w.data) v = rng.normal(0.0, 4.0);
    for (double& v : wild.g_fc2_w.data) v = rng.normal(0.0, 4.0);
    const RealTensor a2 = ksm_alpha(d, wild);
    bool in_range = true;
    for (double v : a2.data) in_range = in_range && v > 0.0 && v < 2.0;
    CheckResult range;
    range.name = "gate range (0, 2)";
    range.pass = in_range;
    range.detail = in_range ? "all gates strictly inside (0, 2)" : "gate escaped (0, 2)";
    out.push_back(range);
    return out;
}

inline std::vector<CheckResult> selfcheck_fbm() {
    std::vector<CheckResult> out;
    Rng rng(104);
    const std::vector<double> psi{0.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0};
    const BandMaskSet set = build_band_masks(16, 16, psi);

    double partition_err = 0.0;
    for (std::size_t i = 0; i < 16 * 16; ++i) {
        double total = 0.0;
        for (const RealTensor& m : set.masks) total += m.data[i];
        partition_err = std::max(partition_err, std::abs(total - 1.0));
    }
    out.push_back(detail::check_against("band masks partition the plane", partition_err, 0.0));

    RealTensor x({2, 16, 16});
    for (double& v : x.data) v = rng.normal();
    const std::vector<RealTensor> parts = band_split(x, set);
    RealTensor sum(x.shape, 0.0);
    for (const RealTensor& p : parts) add_inplace(sum, p);
    out.push_back(detail::check_against("band split reconstruction", max_abs_diff(sum, x), 1e-10));

    RealTensor w({3, 3, 2, 2});
    for (double& v : w.data) v = rng.normal();
    RealTensor a({set.band_count(), 16, 16});
    for (std::size_t b = 0; b < set.band_count(); ++b) {
        const double level = 0.25 + 0.5 * static_cast<double>(b);
        for (std::size_t i = 0; i < 16 * 16; ++i) a.data[b * 16 * 16 + i] = level;
    }
    out.push_back(detail::check_against(
        "pre/post modulation agreement (constant maps)",
        max_abs_diff(fbm_forward(x, w, a, set), fbm_forward_postmod(x, w, a, set)), 1e-10));
    return out;
}

inline std::vector<CheckResult> selfcheck_grad() {
    std::vector<CheckResult> out;
    FDConvConfig cfg;
    cfg.k = 3;
    cfg.c_in = 2;
    cfg.c_out = 2;
    cfg.n = 2;
    cfg.bands = {0.0, 0.25, 0.5};
    cfg.seed = 105;
    LayerState s = init_layer_state(cfg);
    Rng rng(106);
    // Move the zero-initialized heads so the probe sees generic curvature.
    for (RealTensor* t : {&s.attention.fc2_w, &s.attention.fc2_b, &s.ksm.local_w, &s.ksm.g_fc2_w,
                          &s.ksm.g_fc2_b, &s.fbm.conv_w, &s.fbm.conv_b})
        for (double& v : t->data) v += rng.normal(0.0, 0.2);

    RealTensor x({2, 6, 6});
    for (double& v : x.data) v = rng.normal();

    const auto loss_on = [&](Tape& tape, const LayerState& state) {
        const LayerTapeCtx ctx = begin_layer_tape(tape, state, 6, 6);
        return tape.softmax_xent(tape.gap(tape.relu(layer_forward_on_tape(tape, ctx, tape.constant(x)))),
                                 1);
    };

    Tape tape;
    const NodeId loss = loss_on(tape, s);
    const GradientMap gm = tape.backprop(loss, RealTensor({1}, 1.0));

    std::vector<RealTensor> values{s.bank.params,   s.attention.fc1_w, s.attention.fc1_b,
                                   s.attention.fc2_w, s.attention.fc2_b, s.ksm.local_w,
                                   s.ksm.g_fc1_w,   s.ksm.g_fc1_b,     s.ksm.g_fc2_w,
                                   s.ksm.g_fc2_b,   s.fbm.conv_w,      s.fbm.conv_b};
    std::vector<RealTensor> analytic;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const NodeId pid = tape.parameters()[i];
        analytic.push_back(gm.has(pid) ? gm.at(pid) : RealTensor(values[i].shape, 0.0));
    }

    const auto objective = [&](const std::vector<RealTensor>& p) {
        LayerState probe = s;
        probe.bank.params = p[0];
        probe.attention.fc1_w = p[1];
        probe.attention.fc1_b = p[2];
        probe.attention.fc2_w = p[3];
        probe.attention.fc2_b = p[4];
        probe.ksm.local_w = p[5];
        probe.ksm.g_fc1_w = p[6];
        probe.ksm.g_fc1_b = p[7];
        probe.ksm.g_fc2_w = p[8];
        probe.ksm.g_fc2_b = p[9];
        probe.fbm.conv_w = p[10];
        probe.fbm.conv_b = p[11];
        Tape t2;
        return t2.value(loss_on(t2, probe))[0];
    };

    Rng pick(107);
    const FiniteDiffReport rep = finite_diff_check(objective, values, analytic, 1e-5, 4, &pick);
    out.push_back(detail::check_against("layer gradients vs central differences (" +
                                            std::to_string(rep.checked) + " coordinates)",
                                        rep.max_rel_error, 1e-5));
    return out;
}

inline std::vector<CheckResult> selfcheck_suite(const std::string& suite) {
    if (suite == "numerics") return selfcheck_numerics();
    if (suite == "fdw") return selfcheck_fdw();
    if (suite == "ksm") return selfcheck_ksm();
    if (suite == "fbm") return selfcheck_fbm();
    if (suite == "grad") return selfcheck_grad();
    if (suite == "all") {
        std::vector<CheckResult> out;
        for (const char* s : {"numerics", "fdw", "ksm", "fbm", "grad"}) {
            std::vector<CheckResult> part = selfcheck_suite(s);
            out.insert(out.end(), part.begin(), part.end());
        }
        return out;
    }
    throw std::invalid_argument("unknown check suite '" + suite +
                                "' (expected numerics, fdw, ksm, fbm, grad, or all)");
}

}  // namespace fdconv

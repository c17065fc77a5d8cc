// Acceptance gate: one line per criterion, [PASS]/[FAIL], nonzero exit on any
// failure.  Tolerances are pinned here, next to the check they bound.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "fdconv/analysis.hpp"
#include "fdconv/autodiff.hpp"
#include "fdconv/checkpoint.hpp"
#include "fdconv/config.hpp"
#include "fdconv/dataset.hpp"
#include "fdconv/fbm.hpp"
#include "fdconv/fdw.hpp"
#include "fdconv/ksm.hpp"
#include "fdconv/layer.hpp"
#include "fdconv/train.hpp"

using namespace fdconv;
using clock_type = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] %2d. %s: %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string g17(double v) { return format_g17(v); }

// --- 1. spectral vs direct convolution --------------------------------------

void criterion_conv_equivalence() {
    constexpr double kBound = 1e-10;
    constexpr double kBudgetSeconds = 10.0;
    const auto t0 = clock_type::now();
    Rng rng(201);
    double worst = 0.0;
    const int kernels[] = {1, 3, 5};
    for (int i = 0; i < 200; ++i) {
        const std::size_t k = static_cast<std::size_t>(kernels[rng.uniform_int(0, 2)]);
        // Spatial extents stay at or above the kernel size and at or below 16.
        const std::size_t h = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(k), 16));
        const std::size_t w = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(k), 16));
        const std::size_t ci = static_cast<std::size_t>(rng.uniform_int(1, 4));
        const std::size_t co = static_cast<std::size_t>(rng.uniform_int(1, 4));
        RealTensor x({ci, h, w}), kr({k, k, ci, co});
        for (double& v : x.data) v = rng.normal();
        for (double& v : kr.data) v = rng.normal();
        worst = std::max(worst, max_abs_diff(conv2d_fft(x, kr), conv2d_direct(x, kr, ConvMode::kCircular)));
    }
    const double elapsed = seconds_since(t0);
    report(1, "spectral convolution matches direct form", worst < kBound && elapsed < kBudgetSeconds,
           "200 instances, max |diff| = " + g17(worst) + " (bound " + g17(kBound) + "), " +
               g17(elapsed) + " s (budget 10 s)");
}

// --- 2. weight orthogonality --------------------------------------------------

void criterion_orthogonality() {
    constexpr double kBound = 1e-8;
    Rng rng(202);
    double worst = 0.0;
    std::string where = "random banks n={2,4,16,64}";
    // Random banks; the grid for c_in=4, c_out=8 carries enough conjugate
    // units for 64 groups.
    for (int n : {2, 4, 16, 64}) {
        const IndexTable table = build_index_table(3, 4, 8);
        const GroupAssignment asg = assign_groups(table, n);
        SpectralBank bank;
        bank.params = RealTensor({table.param_total});
        for (double& v : bank.params.data) v = rng.normal();
        const SimilarityReport rep = pairwise_cosine_similarity(materialize_weights(bank, asg));
        worst = std::max(worst, rep.max_offdiag_abs);
    }

    // After ten epochs of training the groups are unchanged, so the trained
    // bank must stay exactly orthogonal.
    TrainConfig tc;
    tc.layer.k = 3;
    tc.layer.c_in = 1;
    tc.layer.c_out = 8;
    tc.layer.n = 16;
    tc.layer.seed = 23;
    tc.optimizer = "adam";
    tc.lr = 0.01;
    tc.batch = 16;
    tc.steps = 50;  // 80 training samples / 16 per batch = 5 steps per epoch
    tc.dataset_size = 100;
    tc.dataset_s = 16;
    tc.dataset_sigma = 0.05;
    const BandDataset ds = gen_band_dataset(tc.dataset_size, tc.dataset_s, tc.layer.bands,
                                            tc.dataset_sigma, tc.layer.seed + 1);
    const TrainResult run = train(tc, ds, ModelKind::kFdconv);
    const double trained = pairwise_cosine_similarity(
                               materialize_weights(run.model.layer.bank, run.model.layer.assignment))
                               .max_offdiag_abs;
    worst = std::max(worst, trained);
    report(2, "mixture kernels stay pairwise orthogonal", worst < kBound,
           "max |cos| = " + g17(worst) + " over " + where + " and after " +
               std::to_string(run.log.size()) + " training epochs (n=16); bound " + g17(kBound));
}

// --- 3. spectral disjointness -------------------------------------------------

void criterion_disjoint_spectra() {
    constexpr double kBound = 1e-12;
    Rng rng(203);
    double worst = 0.0;
    for (int n : {2, 4, 16, 64}) {
        const IndexTable table = build_index_table(3, 4, 8);
        const GroupAssignment asg = assign_groups(table, n);
        SpectralBank bank;
        bank.params = RealTensor({table.param_total});
        for (double& v : bank.params.data) v = rng.normal();
        worst = std::max(worst, max_native_spectrum_overlap(materialize_weights(bank, asg)));
    }
    report(3, "native magnitude spectra have disjoint support", worst < kBound,
           "max pointwise product = " + g17(worst) + " over n={2,4,16,64} (bound " + g17(kBound) + ")");
}

// --- 4. constant parameter budget ----------------------------------------------

void criterion_budget() {
    const IndexTable table = build_index_table(3, 4, 8);  // 288 coefficients, 146 units
    const std::size_t expected = 3 * 3 * 4 * 8;
    bool ok = table.param_total == expected;
    for (int n = 1; n <= 64 && ok; ++n) {
        const GroupAssignment asg = assign_groups(table, n);
        std::size_t total = 0;
        for (int g = 0; g < n; ++g) total += asg.group_param_count[static_cast<std::size_t>(g)];
        ok = total == expected;

        FDConvConfig cfg;
        cfg.k = 3;
        cfg.c_in = 4;
        cfg.c_out = 8;
        cfg.n = n;
        ok = ok && param_count(cfg).bank == expected;
    }
    report(4, "kernel-bank budget is k*k*C_in*C_out for every n", ok,
           ok ? "exactly " + std::to_string(expected) + " coefficients for n = 1..64"
              : "budget drifted for some n");
}

// --- 5. band partition ----------------------------------------------------------

void criterion_band_partition() {
    constexpr double kRecon = 1e-10;
    constexpr double kEnergyRel = 1e-10;
    const std::vector<double> psi{0.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0};
    Rng rng(205);
    double mask_err = 0.0, recon_err = 0.0, energy_rel = 0.0;
    for (std::size_t extent : {16u, 32u}) {
        const BandMaskSet set = build_band_masks(extent, extent, psi);
        for (std::size_t i = 0; i < extent * extent; ++i) {
            double total = 0.0;
            for (const RealTensor& m : set.masks) total += m.data[i];
            mask_err = std::max(mask_err, std::abs(total - 1.0));
        }
        RealTensor x({2, extent, extent});
        for (double& v : x.data) v = rng.normal();
        const std::vector<RealTensor> parts = band_split(x, set);
        RealTensor sum(x.shape, 0.0);
        double banded = 0.0;
        for (const RealTensor& p : parts) {
            add_inplace(sum, p);
            banded += dot(p, p);
        }
        recon_err = std::max(recon_err, max_abs_diff(sum, x));
        energy_rel = std::max(energy_rel, std::abs(banded - dot(x, x)) / dot(x, x));
    }
    report(5, "frequency bands partition and reconstruct the signal",
           mask_err == 0.0 && recon_err < kRecon && energy_rel < kEnergyRel,
           "mask sum error = " + g17(mask_err) + " (exact), reconstruction = " + g17(recon_err) +
               " (bound " + g17(kRecon) + "), energy rel = " + g17(energy_rel) + " (bound " +
               g17(kEnergyRel) + "), extents {16,32}");
}

// --- 6. modulate-then-convolve vs convolve-then-modulate -------------------------

void criterion_modulation_orders() {
    constexpr double kBound = 1e-10;
    const std::vector<double> psi{0.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0};
    const BandMaskSet set = build_band_masks(16, 16, psi);
    Rng rng(206);
    RealTensor x({2, 16, 16}), w({3, 3, 2, 3});
    for (double& v : x.data) v = rng.normal();
    for (double& v : w.data) v = rng.normal();

    RealTensor a_const({4, 16, 16});
    const double levels[4] = {1.0, 0.4, 1.6, 0.1};
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < 256; ++i) a_const.data[b * 256 + i] = levels[b];
    const double const_gap =
        max_abs_diff(fbm_forward(x, w, a_const, set), fbm_forward_postmod(x, w, a_const, set));

    RealTensor a_vary = a_const;
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j) a_vary(3, i, j) = (i + j) % 2 == 0 ? 1.9 : 0.1;
    const double vary_gap =
        max_abs_diff(fbm_forward(x, w, a_vary, set), fbm_forward_postmod(x, w, a_vary, set));

    report(6, "modulation orders agree only for constant maps", const_gap < kBound,
           "constant maps gap = " + g17(const_gap) + " (bound " + g17(kBound) +
               "); spatially varying maps gap = " + g17(vary_gap) + " (reported, nonzero expected)");
}

// --- 7. gradient correctness -------------------------------------------------------

void criterion_gradients() {
    constexpr double kFdBound = 1e-4;
    constexpr double kDotBound = 1e-10;
    constexpr double kEps = 1e-5;

    FDConvConfig cfg;
    cfg.k = 3;
    cfg.c_in = 2;
    cfg.c_out = 4;
    cfg.n = 4;
    cfg.bands = {0.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0};
    cfg.seed = 207;
    LayerState s = init_layer_state(cfg);
    Rng rng(208);
    for (RealTensor* t : {&s.attention.fc2_w, &s.attention.fc2_b, &s.ksm.local_w, &s.ksm.g_fc2_w,
                          &s.ksm.g_fc2_b, &s.fbm.conv_w, &s.fbm.conv_b})
        for (double& v : t->data) v += rng.normal(0.0, 0.2);

    RealTensor x({2, 8, 8});
    for (double& v : x.data) v = rng.normal();

    const auto loss_on = [&](Tape& tape, const LayerState& state) {
        const LayerTapeCtx ctx = begin_layer_tape(tape, state, 8, 8);
        return tape.softmax_xent(tape.gap(tape.relu(layer_forward_on_tape(tape, ctx, tape.constant(x)))),
                                 2);
    };

    Tape tape;
    const GradientMap gm = tape.backprop(loss_on(tape, s), RealTensor({1}, 1.0));
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
    Rng pick(209);
    const FiniteDiffReport fd = finite_diff_check(objective, values, analytic, kEps, 60, &pick);

    // Adjoint dot tests for the linear operators on the tape.
    Rng dot_rng(210);
    double dot_worst = 0.0;
    RealTensor wfix({3, 3, 2, 3});
    for (double& v : wfix.data) v = dot_rng.normal();
    RealTensor xfix({2, 7, 7});
    for (double& v : xfix.data) v = dot_rng.normal();
    for (ConvMode mode : {ConvMode::kZeroPad, ConvMode::kCircular}) {
        dot_worst = std::max(
            dot_worst, adjoint_dot_test(
                           [&](const RealTensor& in) { return conv2d_direct(in, wfix, mode); },
                           [&](const RealTensor& g) { return conv2d_grad_input(g, wfix, mode, 2, 7, 7); },
                           {2, 7, 7}, {3, 7, 7}, 8, dot_rng));
        dot_worst = std::max(
            dot_worst, adjoint_dot_test(
                           [&](const RealTensor& kw) { return conv2d_direct(xfix, kw, mode); },
                           [&](const RealTensor& g) { return conv2d_grad_weight(g, xfix, 3, mode); },
                           {3, 3, 2, 3}, {3, 7, 7}, 8, dot_rng));
    }
    const BandMaskSet set = build_band_masks(7, 7, {0.0, 0.25, 0.5});
    dot_worst = std::max(dot_worst,
                         adjoint_dot_test([&](const RealTensor& in) { return band_filter(in, set.masks[1]); },
                                          [&](const RealTensor& g) { return band_filter(g, set.masks[1]); },
                                          {2, 7, 7}, {2, 7, 7}, 8, dot_rng));
    {
        const IndexTable table = build_index_table(3, 2, 2);
        const GroupAssignment asg = assign_groups(table, 4);
        for (int g = 0; g < 4; ++g)
            dot_worst = std::max(
                dot_worst,
                adjoint_dot_test(
                    [&](const RealTensor& p) {
                        SpectralBank b;
                        b.params = p;
                        return materialize_group(b, asg, g);
                    },
                    [&](const RealTensor& grad) { return fdw_adjoint(grad, asg, g); },
                    {table.param_total}, {3, 3, 2, 2}, 4, dot_rng));
    }
    {
        RealTensor b({5, 4});
        for (double& v : b.data) v = dot_rng.normal();
        dot_worst = std::max(dot_worst,
                             adjoint_dot_test([&](const RealTensor& a) { return matmul2(a, b); },
                                              [&](const RealTensor& g) { return matmul2(g, transpose2(b)); },
                                              {3, 5}, {3, 4}, 8, dot_rng));
        RealTensor a({3, 5});
        for (double& v : a.data) v = dot_rng.normal();
        dot_worst = std::max(dot_worst,
                             adjoint_dot_test([&](const RealTensor& m) { return matmul2(a, m); },
                                              [&](const RealTensor& g) { return matmul2(transpose2(a), g); },
                                              {5, 4}, {3, 4}, 8, dot_rng));
    }
    {
        const auto gap_fwd = [](const RealTensor& in) {
            RealTensor out({in.shape[0]}, 0.0);
            const std::size_t hw = in.shape[1] * in.shape[2];
            for (std::size_t c = 0; c < in.shape[0]; ++c) {
                double total = 0.0;
                for (std::size_t i = 0; i < hw; ++i) total += in.data[c * hw + i];
                out[c] = total / static_cast<double>(hw);
            }
            return out;
        };
        const auto gap_adj = [](const RealTensor& g) {
            RealTensor out({g.numel(), 6, 6});
            for (std::size_t c = 0; c < g.numel(); ++c)
                for (std::size_t i = 0; i < 36; ++i) out.data[c * 36 + i] = g[c] / 36.0;
            return out;
        };
        dot_worst = std::max(dot_worst, adjoint_dot_test(gap_fwd, gap_adj, {3, 6, 6}, {3}, 8, dot_rng));
    }

    report(7, "layer gradients check out", fd.max_rel_error < kFdBound && dot_worst < kDotBound,
           std::to_string(fd.checked) + " finite-difference coordinates (eps " + g17(kEps) +
               "), max rel = " + g17(fd.max_rel_error) + " (bound " + g17(kFdBound) +
               "); adjoint dot max = " + g17(dot_worst) + " (bound " + g17(kDotBound) + ")");
}

// --- 8. degenerate collapse ------------------------------------------------------

void criterion_degenerate_collapse() {
    constexpr double kConvBound = 1e-10;
    constexpr double kIdentityBound = 1e-12;
    FDConvConfig cfg;
    cfg.k = 3;
    cfg.c_in = 2;
    cfg.c_out = 3;
    cfg.n = 1;
    cfg.enable_ksm = false;
    cfg.enable_fbm = false;
    cfg.seed = 211;
    const LayerState plain = init_layer_state(cfg);
    Rng rng(212);
    RealTensor x({2, 12, 12});
    for (double& v : x.data) v = rng.normal();
    const RealTensor w = materialize_group(plain.bank, plain.assignment, 0);
    const double conv_gap = max_abs_diff(fdconv_forward(x, plain), conv2d_direct(x, w, ConvMode::kCircular));

    FDConvConfig full = cfg;
    full.n = 4;
    full.enable_ksm = true;
    full.enable_fbm = true;
    const LayerState fresh = init_layer_state(full);
    const RealTensor d = channel_descriptor(x);
    const RealTensor alpha = ksm_alpha(d, fresh.ksm);
    double alpha_gap = 0.0;
    for (double v : alpha.data) alpha_gap = std::max(alpha_gap, std::abs(v - 1.0));
    const RealTensor pi = attention_pi(d, fresh.attention, full.tau);
    double pi_gap = 0.0;
    for (std::size_t i = 0; i < pi.numel(); ++i) pi_gap = std::max(pi_gap, std::abs(pi[i] - 0.25));

    report(8, "degenerate settings collapse to a plain convolution",
           conv_gap < kConvBound && alpha_gap < kIdentityBound && pi_gap < kIdentityBound,
           "n=1, gates off: |diff| = " + g17(conv_gap) + " (bound " + g17(kConvBound) +
               "); fresh heads: |alpha-1| = " + g17(alpha_gap) + ", |pi-1/n| = " + g17(pi_gap) +
               " (bound " + g17(kIdentityBound) + ")");
}

// --- 9. toy learning ---------------------------------------------------------------

void criterion_toy_learning() {
    constexpr double kTarget = 0.90;
    constexpr double kBaselineSlackPp = 0.01;
    constexpr double kBudgetSeconds = 300.0;

    TrainConfig tc;  // four-band task at extent 32, eight-kernel mixture
    tc.layer.k = 3;
    tc.layer.c_in = 1;
    tc.layer.c_out = 8;
    tc.layer.n = 8;
    tc.layer.seed = 42;
    tc.optimizer = "adam";
    tc.lr = 0.01;
    tc.batch = 32;
    tc.steps = 500;
    tc.dataset_size = 2000;
    tc.dataset_s = 32;
    tc.dataset_sigma = 0.05;

    const BandDataset ds = gen_band_dataset(tc.dataset_size, tc.dataset_s, tc.layer.bands,
                                            tc.dataset_sigma, tc.layer.seed + 1);
    const auto t0 = clock_type::now();
    const TrainResult dynamic = train(tc, ds, ModelKind::kFdconv);
    const double dyn_seconds = seconds_since(t0);
    const double dyn_acc = evaluate(dynamic.model, ds, true).accuracy;

    const auto t1 = clock_type::now();
    const TrainResult baseline = train(tc, ds, ModelKind::kStaticConv);
    const double base_seconds = seconds_since(t1);
    const double base_acc = evaluate(baseline.model, ds, true).accuracy;

    const bool pass =
        dyn_acc >= kTarget && dyn_acc >= base_acc - kBaselineSlackPp && dyn_seconds < kBudgetSeconds;
    report(9, "dynamic layer learns the band task", pass,
           "held-out accuracy " + g17(dyn_acc) + " (target >= " + g17(kTarget) + ") in " +
               g17(dyn_seconds) + " s (budget 300 s); static baseline " + g17(base_acc) + " in " +
               g17(base_seconds) + " s; floor = baseline - " + g17(kBaselineSlackPp));
}

// --- 10. persistence and determinism -------------------------------------------------

void criterion_persistence() {
    TrainConfig tc;
    tc.layer.k = 3;
    tc.layer.c_in = 1;
    tc.layer.c_out = 4;
    tc.layer.n = 2;
    tc.layer.bands = {0.0, 0.25, 0.5};
    tc.layer.seed = 77;
    tc.optimizer = "adam";
    tc.lr = 0.01;
    tc.batch = 8;
    tc.steps = 10;
    tc.dataset_size = 40;
    tc.dataset_s = 8;
    tc.dataset_sigma = 0.0;
    const BandDataset ds = gen_band_dataset(tc.dataset_size, tc.dataset_s, tc.layer.bands,
                                            tc.dataset_sigma, tc.layer.seed + 1);

    const TrainResult a = train(tc, ds, ModelKind::kFdconv);
    const TrainResult b = train(tc, ds, ModelKind::kFdconv);
    const std::string bytes_a = encode_checkpoint(model_to_checkpoint(a.model, tc, a.log));
    const std::string bytes_b = encode_checkpoint(model_to_checkpoint(b.model, tc, b.log));
    const bool deterministic = bytes_a == bytes_b;

    const auto path = std::filesystem::temp_directory_path() / "fdconv_acceptance.ckpt";
    save_checkpoint(path.string(), model_to_checkpoint(a.model, tc, a.log));
    const Checkpoint loaded = load_checkpoint(path.string());
    const LoadedRun run = checkpoint_to_model(loaded);
    const std::string bytes_back = encode_checkpoint(model_to_checkpoint(run.model, run.config, run.log));
    std::filesystem::remove(path);
    const bool round_trip = bytes_back == bytes_a;

    report(10, "checkpoints round-trip bitwise and runs are reproducible", deterministic && round_trip,
           std::string("equal-seed runs identical: ") + (deterministic ? "yes" : "NO") +
               "; file round trip bitwise: " + (round_trip ? "yes" : "NO") + " (" +
               std::to_string(bytes_a.size()) + " bytes, " + std::to_string(a.log.size()) +
               " epoch records)");
}

void guard(int id, const char* name, void (*fn)()) {
    try {
        fn();
    } catch (const std::exception& e) {
        report(id, name, false, std::string("exception: ") + e.what());
    }
}

}  // namespace

int main() {
    guard(1, "spectral convolution matches direct form", criterion_conv_equivalence);
    guard(2, "mixture kernels stay pairwise orthogonal", criterion_orthogonality);
    guard(3, "native magnitude spectra have disjoint support", criterion_disjoint_spectra);
    guard(4, "kernel-bank budget is k*k*C_in*C_out for every n", criterion_budget);
    guard(5, "frequency bands partition and reconstruct the signal", criterion_band_partition);
    guard(6, "modulation orders agree only for constant maps", criterion_modulation_orders);
    guard(7, "layer gradients check out", criterion_gradients);
    guard(8, "degenerate settings collapse to a plain convolution", criterion_degenerate_collapse);
    guard(9, "dynamic layer learns the band task", criterion_toy_learning);
    guard(10, "checkpoints round-trip bitwise and runs are reproducible", criterion_persistence);

    std::printf("%d of 10 criteria passed\n", 10 - g_failures);
    return g_failures == 0 ? 0 : 1;
}

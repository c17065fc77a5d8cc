#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <memory>

#include "fdconv/autodiff.hpp"

#include "oracles.hpp"

using namespace fdconv;

namespace {

std::shared_ptr<const RealTensor> lowpass_mask(std::size_t h, std::size_t w) {
    auto mask = std::make_shared<RealTensor>(std::vector<std::size_t>{h, w}, 0.0);
    // Keep only the DC bin: the filter then replaces each channel by its mean.
    (*mask)(0, 0) = 1.0;
    return mask;
}

}  // namespace

TEST(Autodiff, ForwardValuesElementwise) {
    Tape tape;
    const NodeId a = tape.parameter(RealTensor({2, 2}, std::vector<double>{1, -2, 3, 0}));
    const NodeId b = tape.constant(RealTensor({2, 2}, std::vector<double>{10, 20, 30, 40}));
    EXPECT_EQ(tape.value(tape.add(a, b)).data, (std::vector<double>{11, 18, 33, 40}));
    EXPECT_EQ(tape.value(tape.mul(a, b)).data, (std::vector<double>{10, -40, 90, 0}));
    EXPECT_EQ(tape.value(tape.relu(a)).data, (std::vector<double>{1, 0, 3, 0}));
    EXPECT_EQ(tape.value(tape.scale(a, -0.5)).data, (std::vector<double>{-0.5, 1, -1.5, 0}));
    EXPECT_EQ(tape.value(tape.sum(a))[0], 2.0);
    const RealTensor sig = tape.value(tape.sigmoid(a));
    EXPECT_NEAR(sig[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(Autodiff, BroadcastMulFollowsShapeRules) {
    Tape tape;
    const NodeId a = tape.parameter(RealTensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
    const NodeId row = tape.constant(RealTensor({1, 3}, std::vector<double>{10, 100, 1000}));
    const NodeId out = tape.mul(a, row);
    EXPECT_EQ(tape.value(out).shape, (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(tape.value(out).data, (std::vector<double>{10, 200, 3000, 40, 500, 6000}));
    const NodeId bad = tape.constant(RealTensor({2, 2}, 0.0));
    EXPECT_THROW(tape.mul(a, bad), std::invalid_argument);
}

TEST(Autodiff, MatmulAndReshape) {
    Tape tape;
    const NodeId a = tape.parameter(RealTensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
    const NodeId b = tape.constant(RealTensor({3, 2}, std::vector<double>{7, 8, 9, 10, 11, 12}));
    const RealTensor& p = tape.value(tape.matmul(a, b));
    EXPECT_EQ(p.data, (std::vector<double>{58, 64, 139, 154}));
    const RealTensor& r = tape.value(tape.reshape(a, {6}));
    EXPECT_EQ(r.shape, (std::vector<std::size_t>{6}));
    EXPECT_THROW(tape.reshape(a, {4}), std::invalid_argument);
    EXPECT_THROW(tape.matmul(a, a), std::invalid_argument);
}

TEST(Autodiff, GapAveragesPerChannel) {
    Tape tape;
    RealTensor x({2, 2, 2}, std::vector<double>{1, 2, 3, 4, 10, 20, 30, 40});
    const RealTensor& g = tape.value(tape.gap(tape.constant(x)));
    EXPECT_EQ(g.data, (std::vector<double>{2.5, 25.0}));
    EXPECT_THROW(tape.gap(tape.constant(RealTensor({4}, 0.0))), std::invalid_argument);
}

TEST(Autodiff, SoftmaxXentMatchesManualValue) {
    Tape tape;
    RealTensor z({3}, std::vector<double>{1.0, 2.0, 0.5});
    const NodeId loss = tape.softmax_xent(tape.parameter(z), 1);
    const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5));
    EXPECT_NEAR(tape.value(loss)[0], lse - 2.0, 1e-14);
    EXPECT_THROW(tape.softmax_xent(tape.constant(z), 3), std::invalid_argument);
    EXPECT_THROW(tape.softmax_xent(tape.constant(z), -1), std::invalid_argument);
}

TEST(Autodiff, SoftmaxXentStableForHugeLogits) {
    Tape tape;
    RealTensor z({2}, std::vector<double>{1e6, -1e6});
    const NodeId logits = tape.parameter(z);
    const NodeId loss = tape.softmax_xent(logits, 0);
    EXPECT_NEAR(tape.value(loss)[0], 0.0, 1e-12);
    const GradientMap gm = tape.backprop(loss, RealTensor({1}, {1.0}));
    EXPECT_TRUE(all_finite(gm.at(logits)));
}

TEST(Autodiff, BandFilterNodeMatchesLibraryCall) {
    Rng rng(31);
    Tape tape;
    const RealTensor x = oracle::random_tensor({2, 4, 4}, rng);
    auto mask = lowpass_mask(4, 4);
    const NodeId out = tape.band_filter(tape.constant(x), mask);
    EXPECT_LT(max_abs_diff(tape.value(out), band_filter(x, *mask)), 1e-15);
    // DC-only mask averages each channel.
    double mean0 = 0.0;
    for (std::size_t i = 0; i < 16; ++i) mean0 += x.data[i];
    mean0 /= 16.0;
    EXPECT_NEAR(tape.value(out)(0, 2, 3), mean0, 1e-12);
}

TEST(Autodiff, FdwMaterializeNodeStacksGroups) {
    Rng rng(32);
    const IndexTable t = build_index_table(3, 1, 2);
    auto asg = std::make_shared<GroupAssignment>(assign_groups(t, 3));
    SpectralBank bank;
    bank.params = oracle::random_tensor({t.param_total}, rng);

    Tape tape;
    const NodeId node = tape.fdw_materialize(tape.parameter(bank.params), asg);
    const RealTensor& stacked = tape.value(node);
    ASSERT_EQ(stacked.shape, (std::vector<std::size_t>{3, t.param_total}));
    const std::vector<RealTensor> w = materialize_weights(bank, *asg);
    for (int g = 0; g < 3; ++g)
        for (std::size_t i = 0; i < t.param_total; ++i)
            EXPECT_EQ(stacked(static_cast<std::size_t>(g), i), w[static_cast<std::size_t>(g)].data[i]);

    EXPECT_THROW(tape.fdw_materialize(tape.constant(RealTensor({3}, 0.0)), asg), std::invalid_argument);
}

TEST(Autodiff, FiniteDiffAcrossEveryOp) {
    // One composite scalar touching every differentiable op on the tape.
    Rng rng(33);
    const IndexTable table = build_index_table(3, 1, 1);
    auto asg = std::make_shared<GroupAssignment>(assign_groups(table, 2));
    auto mask = lowpass_mask(5, 5);

    const RealTensor p_bank = oracle::random_normal_tensor({9}, rng);
    const RealTensor p_img = oracle::random_normal_tensor({1, 5, 5}, rng);
    const RealTensor p_vec = oracle::random_normal_tensor({2}, rng);
    const RealTensor p_mat = oracle::random_normal_tensor({2, 2}, rng);

    Tape tape;
    const NodeId bank = tape.parameter(p_bank);
    const NodeId img = tape.parameter(p_img);
    const NodeId vec = tape.parameter(p_vec);
    const NodeId mat = tape.parameter(p_mat);

    const auto graph = [&](Tape& t, NodeId nb, NodeId ni, NodeId nv, NodeId nm) {
        const NodeId stacked = t.fdw_materialize(nb, asg);                        // (2,9)
        const NodeId pi = t.softmax(t.reshape(t.matmul(t.reshape(nv, {1, 2}), nm), {2}), 0.7);
        const NodeId mixed = t.reshape(t.matmul(t.reshape(pi, {1, 2}), stacked), {3, 3, 1, 1});
        const NodeId filtered = t.band_filter(ni, mask);
        const NodeId gain = t.sigmoid(t.gap(filtered));                            // (1)
        const NodeId scaled_img = t.mul(ni, t.reshape(gain, {1, 1, 1}));
        const NodeId y = t.conv2d(scaled_img, mixed, ConvMode::kZeroPad);
        const NodeId act = t.relu(t.add(y, t.scale(filtered, 0.25)));
        const NodeId pooled = t.gap(act);                                          // (1)
        const NodeId s = t.add(pooled, t.sum(pi));                                 // (1)
        const NodeId spread = t.mul(t.constant(RealTensor({2}, std::vector<double>{1.5, -0.5})), s);
        const NodeId logits = t.add(spread, pi);
        return t.add(t.softmax_xent(logits, 1), t.scale(t.sum(mixed), 0.05));
    };
    const NodeId loss = graph(tape, bank, img, vec, mat);
    ASSERT_EQ(tape.value(loss).numel(), 1u);

    const GradientMap gm = tape.backprop(loss, RealTensor({1}, {1.0}));
    std::vector<RealTensor> analytic;
    for (NodeId pid : {bank, img, vec, mat})
        analytic.push_back(gm.has(pid) ? gm.at(pid) : RealTensor(tape.value(pid).shape, 0.0));

    const auto objective = [&](const std::vector<RealTensor>& p) {
        Tape t2;
        const NodeId l = graph(t2, t2.parameter(p[0]), t2.parameter(p[1]), t2.parameter(p[2]),
                               t2.parameter(p[3]));
        return t2.value(l)[0];
    };
    const FiniteDiffReport rep =
        finite_diff_check(objective, {p_bank, p_img, p_vec, p_mat}, analytic, 1e-5);
    EXPECT_GT(rep.checked, 30u);
    EXPECT_LT(rep.max_rel_error, 1e-7) << "worst at param " << rep.worst.param << " index "
                                       << rep.worst.index;
}

TEST(Autodiff, BackpropIsBitwiseDeterministic) {
    const auto run = [](std::vector<double>& out_bits) {
        Rng rng(34);
        Tape tape;
        const NodeId x = tape.parameter(oracle::random_normal_tensor({2, 6, 6}, rng));
        const NodeId w = tape.parameter(oracle::random_normal_tensor({3, 3, 2, 2}, rng));
        const NodeId y = tape.conv2d(x, w, ConvMode::kCircular);
        const NodeId loss = tape.sum(tape.relu(y));
        const GradientMap gm = tape.backprop(loss, RealTensor({1}, {1.0}));
        out_bits = gm.at(x).data;
        const std::vector<double>& wd = gm.at(w).data;
        out_bits.insert(out_bits.end(), wd.begin(), wd.end());
    };
    std::vector<double> a, b;
    run(a);
    run(b);
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(double)));
}

TEST(Autodiff, ReplayMatchesAfterParameterUpdate) {
    Rng rng(35);
    Tape tape;
    const NodeId x = tape.parameter(oracle::random_tensor({1, 4, 4}, rng));
    const NodeId w = tape.parameter(oracle::random_tensor({3, 3, 1, 1}, rng));
    const NodeId loss = tape.sum(tape.sigmoid(tape.conv2d(x, w, ConvMode::kZeroPad)));
    (void)loss;
    EXPECT_TRUE(tape.replay_matches());
    // Stale cached values are detected: poke a parameter without recompute.
    tape.set_parameter(w, oracle::random_tensor({3, 3, 1, 1}, rng));
    EXPECT_FALSE(tape.replay_matches());
}

TEST(Autodiff, SeedShapeChecked) {
    Tape tape;
    const NodeId x = tape.parameter(RealTensor({3}, 1.0));
    const NodeId s = tape.sum(x);
    EXPECT_THROW(tape.backprop(s, RealTensor({2}, 1.0)), std::invalid_argument);
    EXPECT_NO_THROW(tape.backprop(s, RealTensor({1}, 1.0)));
}

TEST(Autodiff, GradOfSoftmaxSumsToZero) {
    Rng rng(36);
    Tape tape;
    const NodeId z = tape.parameter(oracle::random_normal_tensor({5}, rng));
    const NodeId p = tape.softmax(z, 0.3);
    // d(sum of weighted probs)/dz has zero total mass: softmax is shift
    // invariant.
    const NodeId obj = tape.sum(tape.mul(p, tape.constant(oracle::random_normal_tensor({5}, rng))));
    const GradientMap gm = tape.backprop(obj, RealTensor({1}, {1.0}));
    double total = 0.0;
    for (double v : gm.at(z).data) total += v;
    EXPECT_NEAR(total, 0.0, 1e-14);
}

TEST(Autodiff, ConvAdjointDotTests) {
    Rng rng(37);
    const RealTensor w = oracle::random_normal_tensor({3, 3, 2, 3}, rng);
    for (ConvMode mode : {ConvMode::kZeroPad, ConvMode::kCircular}) {
        const double worst = adjoint_dot_test(
            [&](const RealTensor& x) { return conv2d_direct(x, w, mode); },
            [&](const RealTensor& g) { return conv2d_grad_input(g, w, mode, 2, 5, 5); },
            {2, 5, 5}, {3, 5, 5}, 8, rng);
        EXPECT_LT(worst, 1e-12);
    }
}

TEST(Autodiff, BandFilterIsSelfAdjoint) {
    Rng rng(38);
    RealTensor mask({6, 6}, 0.0);
    mask(0, 0) = 1.0;
    mask(1, 2) = 1.0;
    mask(5, 4) = 1.0;  // conjugate bin of (1,2), keeps the output real
    const double worst = adjoint_dot_test(
        [&](const RealTensor& x) { return band_filter(x, mask); },
        [&](const RealTensor& g) { return band_filter(g, mask); },
        {2, 6, 6}, {2, 6, 6}, 8, rng);
    EXPECT_LT(worst, 1e-12);
}

TEST(Autodiff, FiniteDiffGuards) {
    const auto f = [](const std::vector<RealTensor>& p) { return p[0][0]; };
    std::vector<RealTensor> params{RealTensor({1}, {2.0})};
    std::vector<RealTensor> grads{RealTensor({1}, {1.0})};
    EXPECT_THROW(finite_diff_check(f, params, grads, 1e-2), std::invalid_argument);
    EXPECT_THROW(finite_diff_check(f, params, grads, 1e-8), std::invalid_argument);
    EXPECT_THROW(finite_diff_check(f, params, {}, 1e-5), std::invalid_argument);

    const auto bad = [](const std::vector<RealTensor>& p) { return std::log(p[0][0]); };
    std::vector<RealTensor> at_zero{RealTensor({1}, {0.0})};
    std::vector<RealTensor> g0{RealTensor({1}, {0.0})};
    EXPECT_THROW(finite_diff_check(bad, at_zero, g0, 1e-5), std::runtime_error);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
    Tape tape;
    const NodeId c = tape.constant(RealTensor({2}, 3.0));
    const NodeId p = tape.parameter(RealTensor({2}, 1.0));
    const NodeId loss = tape.sum(tape.mul(c, p));
    const GradientMap gm = tape.backprop(loss, RealTensor({1}, {1.0}));
    EXPECT_TRUE(gm.has(p));
    EXPECT_EQ(gm.at(p).data, (std::vector<double>{3.0, 3.0}));
    EXPECT_FALSE(gm.has(c));
}

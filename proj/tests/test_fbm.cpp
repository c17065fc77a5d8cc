#include <gtest/gtest.h>

#include <cmath>

#include "fdconv/fbm.hpp"

#include "oracles.hpp"

using namespace fdconv;

namespace {

const std::vector<double> kDefaultPsi{0.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0};

// Real sinusoid at integer frequency (u, v) on an h x w grid.
RealTensor sinusoid(std::size_t h, std::size_t w, int u, int v) {
    RealTensor x({1, h, w});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            x(0, i, j) = std::cos(2.0 * kPi * (static_cast<double>(u) * static_cast<double>(i) / static_cast<double>(h) +
                                               static_cast<double>(v) * static_cast<double>(j) / static_cast<double>(w)));
    return x;
}

}  // namespace

TEST(Fbm, ThresholdValidation) {
    EXPECT_NO_THROW(check_band_thresholds(kDefaultPsi));
    EXPECT_NO_THROW(check_band_thresholds({0.0, 0.5}));
    EXPECT_THROW(check_band_thresholds({0.0}), std::invalid_argument);
    EXPECT_THROW(check_band_thresholds({0.1, 0.5}), std::invalid_argument);
    EXPECT_THROW(check_band_thresholds({0.0, 0.4}), std::invalid_argument);
    EXPECT_THROW(check_band_thresholds({0.0, 0.3, 0.2, 0.5}), std::invalid_argument);
    EXPECT_THROW(check_band_thresholds({0.0, 0.25, 0.25, 0.5}), std::invalid_argument);
}

TEST(Fbm, MasksPartitionEveryBin) {
    for (std::size_t h : {8u, 16u, 15u})
        for (std::size_t w : {8u, 9u, 32u}) {
            const BandMaskSet set = build_band_masks(h, w, kDefaultPsi);
            ASSERT_EQ(set.band_count(), 4u);
            for (std::size_t i = 0; i < h * w; ++i) {
                double total = 0.0;
                for (const RealTensor& m : set.masks) {
                    EXPECT_TRUE(m.data[i] == 0.0 || m.data[i] == 1.0);
                    total += m.data[i];
                }
                EXPECT_EQ(total, 1.0) << "bin " << i << " of " << h << "x" << w;
            }
        }
}

TEST(Fbm, MaskMembershipAtKeyBins) {
    const BandMaskSet set = build_band_masks(16, 16, kDefaultPsi);
    // DC: radius 0 -> band 0.
    EXPECT_EQ(set.masks[0](0, 0), 1.0);
    // (1,0): radius 1/16 -> half-open boundary promotes it to band 1.
    EXPECT_EQ(set.masks[1](1, 0), 1.0);
    // (0,2): radius 2/16 = 1/8 -> band 2.
    EXPECT_EQ(set.masks[2](0, 2), 1.0);
    // (4,3): max(4,3)/16 = 1/4 -> band 3.
    EXPECT_EQ(set.masks[3](4, 3), 1.0);
    // Nyquist row 8: radius exactly 1/2 stays inside the top band.
    EXPECT_EQ(set.masks[3](8, 0), 1.0);
    EXPECT_EQ(set.masks[3](8, 8), 1.0);
}

TEST(Fbm, BandSplitReconstructsSignal) {
    Rng rng(51);
    for (std::size_t extent : {8u, 12u}) {
        const BandMaskSet set = build_band_masks(extent, extent, kDefaultPsi);
        const RealTensor x = oracle::random_normal_tensor({2, extent, extent}, rng);
        const std::vector<RealTensor> parts = band_split(x, set);
        RealTensor sum(x.shape, 0.0);
        for (const RealTensor& p : parts) add_inplace(sum, p);
        EXPECT_LT(max_abs_diff(sum, x), 1e-12);
    }
}

TEST(Fbm, BandEnergiesAreOrthogonal) {
    // Disjoint supports: total energy equals the sum of band energies.
    Rng rng(52);
    const BandMaskSet set = build_band_masks(16, 16, kDefaultPsi);
    const RealTensor x = oracle::random_normal_tensor({1, 16, 16}, rng);
    const std::vector<RealTensor> parts = band_split(x, set);
    double banded = 0.0;
    for (const RealTensor& p : parts) banded += dot(p, p);
    EXPECT_NEAR(dot(x, x), banded, 1e-10 * std::max(1.0, dot(x, x)));
    for (std::size_t a = 0; a < parts.size(); ++a)
        for (std::size_t b = a + 1; b < parts.size(); ++b)
            EXPECT_LT(std::abs(dot(parts[a], parts[b])), 1e-10);
}

TEST(Fbm, SinusoidLandsInExactlyOneBand) {
    const BandMaskSet set = build_band_masks(16, 16, kDefaultPsi);
    // (u=3, v=1): Chebyshev radius 3/16 in [1/8, 1/4) -> band 2.
    const RealTensor x = sinusoid(16, 16, 3, 1);
    const std::vector<RealTensor> parts = band_split(x, set);
    EXPECT_LT(max_abs_diff(parts[2], x), 1e-12);
    for (std::size_t b : {0u, 1u, 3u}) EXPECT_LT(max_abs(parts[b]), 1e-12);
}

TEST(Fbm, FilterIsIdempotentPerBand) {
    Rng rng(53);
    const BandMaskSet set = build_band_masks(8, 8, kDefaultPsi);
    const RealTensor x = oracle::random_normal_tensor({1, 8, 8}, rng);
    for (const RealTensor& m : set.masks) {
        const RealTensor once = band_filter(x, m);
        EXPECT_LT(max_abs_diff(band_filter(once, m), once), 1e-12);
    }
}

TEST(Fbm, FreshPredictorPassesEverythingThrough) {
    // Zero-filled predictor: band 0 plane is exactly 1, others sigmoid(0)=1/2.
    Rng rng(54);
    const FbmParams p = init_fbm_params(2, 4);
    const RealTensor x = oracle::random_normal_tensor({2, 8, 8}, rng);
    const RealTensor a = predict_modulation(x, p, 4);
    ASSERT_EQ(a.shape, (std::vector<std::size_t>{4, 8, 8}));
    for (std::size_t i = 0; i < 64; ++i) {
        EXPECT_EQ(a.data[i], 1.0);
        for (std::size_t b = 1; b < 4; ++b) EXPECT_EQ(a.data[b * 64 + i], 0.5);
    }
}

TEST(Fbm, PredictorRespondsToBias) {
    FbmParams p = init_fbm_params(1, 3);
    p.conv_b[0] = 50.0;   // saturates high
    p.conv_b[1] = -50.0;  // saturates low
    const RealTensor x({1, 4, 4}, 0.0);
    const RealTensor a = predict_modulation(x, p, 3);
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_NEAR(a.data[16 + i], 1.0, 1e-15);
        EXPECT_NEAR(a.data[32 + i], 0.0, 1e-15);
    }
}

TEST(Fbm, PreAndPostModulationAgreeForConstantMaps) {
    Rng rng(55);
    const BandMaskSet set = build_band_masks(8, 8, kDefaultPsi);
    const RealTensor x = oracle::random_normal_tensor({2, 8, 8}, rng);
    const RealTensor w = oracle::random_normal_tensor({3, 3, 2, 3}, rng);
    RealTensor a({4, 8, 8});
    const double levels[4] = {1.0, 0.3, 1.7, 0.05};
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < 64; ++i) a.data[b * 64 + i] = levels[b];
    const RealTensor pre = fbm_forward(x, w, a, set);
    const RealTensor post = fbm_forward_postmod(x, w, a, set);
    EXPECT_LT(max_abs_diff(pre, post), 1e-10);
}

TEST(Fbm, PreAndPostModulationDifferForVaryingMaps) {
    // A spatially varying plane does not commute with convolution, so the two
    // orders are genuinely different operators.
    Rng rng(56);
    const BandMaskSet set = build_band_masks(8, 8, kDefaultPsi);
    const RealTensor x = oracle::random_normal_tensor({1, 8, 8}, rng);
    const RealTensor w = oracle::random_normal_tensor({3, 3, 1, 1}, rng);
    RealTensor a({4, 8, 8}, 1.0);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) a(3, i, j) = (i + j) % 2 == 0 ? 1.9 : 0.1;
    const RealTensor pre = fbm_forward(x, w, a, set);
    const RealTensor post = fbm_forward_postmod(x, w, a, set);
    EXPECT_GT(max_abs_diff(pre, post), 1e-4);
}

TEST(Fbm, UnitModulationCollapsesToPlainConvolution) {
    Rng rng(57);
    const BandMaskSet set = build_band_masks(8, 8, kDefaultPsi);
    const RealTensor x = oracle::random_normal_tensor({2, 8, 8}, rng);
    const RealTensor w = oracle::random_normal_tensor({3, 3, 2, 2}, rng);
    const RealTensor a({4, 8, 8}, 1.0);
    const RealTensor direct = conv2d_direct(x, w, ConvMode::kCircular);
    EXPECT_LT(max_abs_diff(fbm_forward(x, w, a, set), direct), 1e-10);
    EXPECT_LT(max_abs_diff(fbm_forward_postmod(x, w, a, set), direct), 1e-10);
}

TEST(Fbm, ArgumentValidation) {
    const BandMaskSet set = build_band_masks(8, 8, kDefaultPsi);
    const RealTensor x({1, 8, 8}, 0.0);
    const RealTensor w({3, 3, 1, 1}, 0.0);
    EXPECT_THROW(fbm_forward(x, w, RealTensor({3, 8, 8}, 1.0), set), std::invalid_argument);
    EXPECT_THROW(fbm_forward(x, w, RealTensor({4, 4, 8}, 1.0), set), std::invalid_argument);
    EXPECT_THROW(band_filter(x, RealTensor({4, 4}, 1.0)), std::invalid_argument);
    EXPECT_THROW(build_band_masks(0, 8, kDefaultPsi), std::invalid_argument);
    EXPECT_THROW(init_fbm_params(1, 1), std::invalid_argument);
    FbmParams p = init_fbm_params(1, 3);
    EXPECT_THROW(predict_modulation(x, p, 4), std::invalid_argument);
}

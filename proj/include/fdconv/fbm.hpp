#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdconv/conv.hpp"
#include "fdconv/dft.hpp"
#include "fdconv/rng.hpp"
#include "fdconv/tensor.hpp"

namespace fdconv {

// Frequency band modulation.  The normalized frequency plane is partitioned
// into B annular bands by thresholds 0 = psi_0 < ... < psi_B = 1/2 on the
// Chebyshev radius max(|f_u|, |f_v|); every bin lands in exactly one band, so
// the band indicators sum to one and band-filtered copies of a signal sum
// back to the signal.

struct BandMaskSet {
    std::size_t height = 0, width = 0;
    std::vector<double> thresholds;   // psi_0 .. psi_B
    std::vector<RealTensor> masks;    // B grids of shape (H, W), raw bin order
    std::size_t band_count() const { return masks.size(); }
};

inline void check_band_thresholds(const std::vector<double>& psi) {
    if (psi.size() < 2)
        throw std::invalid_argument("band thresholds: need at least two entries, got " +
                                    std::to_string(psi.size()));
    if (psi.front() != 0.0)
        throw std::invalid_argument("band thresholds: first threshold must be 0");
    if (psi.back() != 0.5)
        throw std::invalid_argument("band thresholds: last threshold must be 1/2");
    for (std::size_t i = 1; i < psi.size(); ++i)
        if (!(psi[i] > psi[i - 1]))
            throw std::invalid_argument("band thresholds: must be strictly ascending");
}

inline BandMaskSet build_band_masks(std::size_t h, std::size_t w, const std::vector<double>& psi) {
    if (h == 0 || w == 0) throw std::invalid_argument("build_band_masks: empty grid");
    check_band_thresholds(psi);
    const std::size_t bands = psi.size() - 1;

    BandMaskSet set;
    set.height = h;
    set.width = w;
    set.thresholds = psi;
    set.masks.assign(bands, RealTensor({h, w}, 0.0));
    for (std::size_t r = 0; r < h; ++r) {
        const int u = r < (h + 1) / 2 ? static_cast<int>(r) : static_cast<int>(r) - static_cast<int>(h);
        const double fu = std::abs(static_cast<double>(u)) / static_cast<double>(h);
        for (std::size_t c = 0; c < w; ++c) {
            const int v = c < (w + 1) / 2 ? static_cast<int>(c) : static_cast<int>(c) - static_cast<int>(w);
            const double fv = std::abs(static_cast<double>(v)) / static_cast<double>(w);
            const double m = std::max(fu, fv);
            for (std::size_t b = 0; b < bands; ++b) {
                // Half-open [psi_b, psi_{b+1}); the top band also takes the
                // Nyquist boundary m == 1/2.
                const bool in = b + 1 == bands ? (m >= psi[b] && m <= psi[b + 1])
                                               : (m >= psi[b] && m < psi[b + 1]);
                if (in) {
                    set.masks[b](r, c) = 1.0;
                    break;
                }
            }
        }
    }
    return set;
}

// Keep only the masked part of the spectrum, per channel:
//   y_c = real(idft2(mask .* dft2(x_c)))
// The mask is real and symmetric under bin negation, so the result is real
// and the operator is self-adjoint.
inline RealTensor band_filter(const RealTensor& x, const RealTensor& mask) {
    if (x.rank() != 3)
        throw std::invalid_argument("band_filter: input must be (C,H,W), got " + shape_str(x.shape));
    if (mask.rank() != 2 || mask.shape[0] != x.shape[1] || mask.shape[1] != x.shape[2])
        throw std::invalid_argument("band_filter: mask " + shape_str(mask.shape) + " does not match input " +
                                    shape_str(x.shape));
    const std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
    RealTensor y(x.shape);
    for (std::size_t ch = 0; ch < c; ++ch) {
        RealTensor plane({h, w});
        std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(ch * h * w),
                  x.data.begin() + static_cast<std::ptrdiff_t>((ch + 1) * h * w), plane.data.begin());
        ComplexGrid spec = dft2(plane);
        for (std::size_t i = 0; i < spec.numel(); ++i) spec.data[i] *= mask.data[i];
        const ComplexGrid back = idft2(spec);
        for (std::size_t i = 0; i < back.numel(); ++i) y.data[ch * h * w + i] = back.data[i].real();
    }
    return y;
}

inline std::vector<RealTensor> band_split(const RealTensor& x, const BandMaskSet& set) {
    std::vector<RealTensor> parts;
    parts.reserve(set.band_count());
    for (const RealTensor& m : set.masks) parts.push_back(band_filter(x, m));
    return parts;
}

// Spatial predictor for per-band modulation maps: a 3x3 zero-padded conv from
// the input produces B-1 logit planes; after the logistic they modulate bands
// 1..B-1, while band 0 is passed through unmodulated (plane of ones).
struct FbmParams {
    RealTensor conv_w;  // (3, 3, C_in, B-1)
    RealTensor conv_b;  // (B-1)
};

inline FbmParams init_fbm_params(int c_in, std::size_t bands) {
    if (bands < 2) throw std::invalid_argument("init_fbm_params: need at least two bands");
    FbmParams p;
    p.conv_w = RealTensor({3, 3, static_cast<std::size_t>(c_in), bands - 1}, 0.0);
    p.conv_b = RealTensor({bands - 1}, 0.0);
    return p;
}

inline RealTensor predict_modulation(const RealTensor& x, const FbmParams& params, std::size_t bands) {
    if (x.rank() != 3) throw std::invalid_argument("predict_modulation: input must be (C,H,W)");
    if (params.conv_w.shape[3] != bands - 1)
        throw std::invalid_argument("predict_modulation: predictor emits " +
                                    std::to_string(params.conv_w.shape[3]) + " planes for " +
                                    std::to_string(bands) + " bands");
    const std::size_t h = x.shape[1], w = x.shape[2];
    const RealTensor logits = conv2d_direct(x, params.conv_w, ConvMode::kZeroPad);
    RealTensor a({bands, h, w}, 1.0);  // band 0 stays at 1
    for (std::size_t b = 1; b < bands; ++b)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                a(b, i, j) = sigmoid(logits(b - 1, i, j) + params.conv_b[b - 1]);
    return a;
}

namespace detail {

inline void check_fbm_args(const RealTensor& x, const RealTensor& a, const BandMaskSet& set) {
    if (x.rank() != 3 || a.rank() != 3)
        throw std::invalid_argument("fbm: input and modulation must be rank 3");
    if (a.shape[0] != set.band_count())
        throw std::invalid_argument("fbm: modulation has " + std::to_string(a.shape[0]) + " planes, mask set has " +
                                    std::to_string(set.band_count()) + " bands");
    if (a.shape[1] != x.shape[1] || a.shape[2] != x.shape[2] || set.height != x.shape[1] ||
        set.width != x.shape[2])
        throw std::invalid_argument("fbm: spatial mismatch, input " + shape_str(x.shape) + " vs modulation " +
                                    shape_str(a.shape));
}

}  // namespace detail

// Production form: modulate the band decomposition of the input, then run one
// convolution over the re-summed signal.
inline RealTensor fbm_forward(const RealTensor& x, const RealTensor& w, const RealTensor& a,
                              const BandMaskSet& set) {
    detail::check_fbm_args(x, a, set);
    const std::size_t c = x.shape[0], h = x.shape[1], wd = x.shape[2];
    RealTensor mixed(x.shape, 0.0);
    for (std::size_t b = 0; b < set.band_count(); ++b) {
        const RealTensor xb = band_filter(x, set.masks[b]);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < wd; ++j) mixed(ch, i, j) += a(b, i, j) * xb(ch, i, j);
    }
    return conv2d_direct(mixed, w, ConvMode::kCircular);
}

// Reference form: convolve every band separately, then modulate the outputs.
// Agrees with fbm_forward when each modulation plane is spatially constant;
// spatially varying maps make the two genuinely different operators.
inline RealTensor fbm_forward_postmod(const RealTensor& x, const RealTensor& w, const RealTensor& a,
                                      const BandMaskSet& set) {
    detail::check_fbm_args(x, a, set);
    const std::size_t h = x.shape[1], wd = x.shape[2];
    RealTensor y;
    for (std::size_t b = 0; b < set.band_count(); ++b) {
        const RealTensor yb = conv2d_direct(band_filter(x, set.masks[b]), w, ConvMode::kCircular);
        if (b == 0) {
            y = RealTensor(yb.shape, 0.0);
        }
        for (std::size_t co = 0; co < yb.shape[0]; ++co)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < wd; ++j) y(co, i, j) += a(b, i, j) * yb(co, i, j);
    }
    return y;
}

}  // namespace fdconv

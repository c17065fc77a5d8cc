#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "fdconv/dft.hpp"
#include "fdconv/tensor.hpp"

namespace fdconv {

enum class ConvMode { kZeroPad, kCircular };

inline const char* to_string(ConvMode m) { return m == ConvMode::kZeroPad ? "zero" : "circular"; }

// Convolution follows the deep-learning convention (cross-correlation, no
// kernel flip).  Input is (C_in, H, W), weight is (k, k, C_in, C_out),
// output is (C_out, H, W): same-size, stride 1, zero or circular padding of
// floor(k/2) on each side.

namespace detail {

inline void check_conv_shapes(const RealTensor& x, const RealTensor& w, const char* what) {
    if (x.rank() != 3)
        throw std::invalid_argument(std::string(what) + ": input must be (C,H,W), got " + shape_str(x.shape));
    if (w.rank() != 4)
        throw std::invalid_argument(std::string(what) + ": weight must be (k,k,C_in,C_out), got " +
                                    shape_str(w.shape));
    if (w.shape[0] != w.shape[1])
        throw std::invalid_argument(std::string(what) + ": kernel must be square, got " + shape_str(w.shape));
    const std::size_t k = w.shape[0];
    if (k % 2 == 0) throw std::invalid_argument(std::string(what) + ": kernel extent must be odd, got " +
                                                std::to_string(k));
    if (k > x.shape[1] || k > x.shape[2])
        throw std::invalid_argument(std::string(what) + ": kernel " + std::to_string(k) +
                                    " exceeds spatial extent " + shape_str(x.shape));
    if (w.shape[2] != x.shape[0])
        throw std::invalid_argument(std::string(what) + ": channel mismatch, input " + shape_str(x.shape) +
                                    " vs weight " + shape_str(w.shape));
}

inline std::size_t wrap(std::ptrdiff_t i, std::size_t n) {
    std::ptrdiff_t m = i % static_cast<std::ptrdiff_t>(n);
    if (m < 0) m += static_cast<std::ptrdiff_t>(n);
    return static_cast<std::size_t>(m);
}

}  // namespace detail

inline RealTensor conv2d_direct(const RealTensor& x, const RealTensor& w, ConvMode mode) {
    detail::check_conv_shapes(x, w, "conv2d_direct");
    const std::size_t c_in = x.shape[0], h = x.shape[1], wd = x.shape[2];
    const std::size_t k = w.shape[0], c_out = w.shape[3];
    const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(k / 2);

    RealTensor y({c_out, h, wd}, 0.0);
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t ci = 0; ci < c_in; ++ci)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < wd; ++j) {
                    double acc = 0.0;
                    for (std::size_t a = 0; a < k; ++a) {
                        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(i + a) - c;
                        for (std::size_t b = 0; b < k; ++b) {
                            const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(j + b) - c;
                            double xv;
                            if (mode == ConvMode::kZeroPad) {
                                if (p < 0 || p >= static_cast<std::ptrdiff_t>(h) || q < 0 ||
                                    q >= static_cast<std::ptrdiff_t>(wd))
                                    continue;
                                xv = x(ci, static_cast<std::size_t>(p), static_cast<std::size_t>(q));
                            } else {
                                xv = x(ci, detail::wrap(p, h), detail::wrap(q, wd));
                            }
                            acc += xv * w(a, b, ci, co);
                        }
                    }
                    y(co, i, j) += acc;
                }
    return y;
}

// Gradient of conv2d_direct w.r.t. the input, given upstream gradient g of
// shape (C_out, H, W).
inline RealTensor conv2d_grad_input(const RealTensor& g, const RealTensor& w, ConvMode mode,
                                    std::size_t c_in, std::size_t h, std::size_t wd) {
    if (g.rank() != 3 || w.rank() != 4)
        throw std::invalid_argument("conv2d_grad_input: bad ranks " + shape_str(g.shape) + ", " +
                                    shape_str(w.shape));
    const std::size_t k = w.shape[0], c_out = w.shape[3];
    if (g.shape[0] != c_out || g.shape[1] != h || g.shape[2] != wd || w.shape[2] != c_in)
        throw std::invalid_argument("conv2d_grad_input: shape mismatch " + shape_str(g.shape) + " vs " +
                                    shape_str(w.shape));
    const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(k / 2);

    RealTensor gx({c_in, h, wd}, 0.0);
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t ci = 0; ci < c_in; ++ci)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < wd; ++j) {
                    const double gv = g(co, i, j);
                    if (gv == 0.0) continue;
                    for (std::size_t a = 0; a < k; ++a) {
                        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(i + a) - c;
                        for (std::size_t b = 0; b < k; ++b) {
                            const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(j + b) - c;
                            if (mode == ConvMode::kZeroPad) {
                                if (p < 0 || p >= static_cast<std::ptrdiff_t>(h) || q < 0 ||
                                    q >= static_cast<std::ptrdiff_t>(wd))
                                    continue;
                                gx(ci, static_cast<std::size_t>(p), static_cast<std::size_t>(q)) +=
                                    gv * w(a, b, ci, co);
                            } else {
                                gx(ci, detail::wrap(p, h), detail::wrap(q, wd)) += gv * w(a, b, ci, co);
                            }
                        }
                    }
                }
    return gx;
}

// Gradient of conv2d_direct w.r.t. the weight.
inline RealTensor conv2d_grad_weight(const RealTensor& g, const RealTensor& x, std::size_t k,
                                     ConvMode mode) {
    if (g.rank() != 3 || x.rank() != 3)
        throw std::invalid_argument("conv2d_grad_weight: bad ranks " + shape_str(g.shape) + ", " +
                                    shape_str(x.shape));
    if (g.shape[1] != x.shape[1] || g.shape[2] != x.shape[2])
        throw std::invalid_argument("conv2d_grad_weight: spatial mismatch " + shape_str(g.shape) + " vs " +
                                    shape_str(x.shape));
    const std::size_t c_in = x.shape[0], h = x.shape[1], wd = x.shape[2], c_out = g.shape[0];
    const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(k / 2);

    RealTensor gw({k, k, c_in, c_out}, 0.0);
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t ci = 0; ci < c_in; ++ci)
            for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < k; ++b) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < h; ++i) {
                        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(i + a) - c;
                        if (mode == ConvMode::kZeroPad && (p < 0 || p >= static_cast<std::ptrdiff_t>(h)))
                            continue;
                        const std::size_t pi = mode == ConvMode::kZeroPad ? static_cast<std::size_t>(p)
                                                                          : detail::wrap(p, h);
                        for (std::size_t j = 0; j < wd; ++j) {
                            const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(j + b) - c;
                            if (mode == ConvMode::kZeroPad && (q < 0 || q >= static_cast<std::ptrdiff_t>(wd)))
                                continue;
                            const std::size_t qi = mode == ConvMode::kZeroPad ? static_cast<std::size_t>(q)
                                                                              : detail::wrap(q, wd);
                            acc += g(co, i, j) * x(ci, pi, qi);
                        }
                    }
                    gw(a, b, ci, co) = acc;
                }
    return gw;
}

// Embed one k x k filter in an H x W grid so that circular correlation with
// it matches conv2d_direct: tap (a, b) lands at ((a - k/2) mod H, (b - k/2) mod W).
inline RealTensor embed_kernel_circular(const RealTensor& w, std::size_t ci, std::size_t co,
                                        std::size_t h, std::size_t wd) {
    const std::size_t k = w.shape[0];
    const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(k / 2);
    RealTensor grid({h, wd}, 0.0);
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b)
            grid(detail::wrap(static_cast<std::ptrdiff_t>(a) - c, h),
                 detail::wrap(static_cast<std::ptrdiff_t>(b) - c, wd)) = w(a, b, ci, co);
    return grid;
}

// Circular convolution through the frequency domain.  Correlation appears as
// multiplication by the conjugated kernel spectrum.  Must agree with
// conv2d_direct(..., kCircular) to round-off.
inline RealTensor conv2d_fft(const RealTensor& x, const RealTensor& w) {
    detail::check_conv_shapes(x, w, "conv2d_fft");
    const std::size_t c_in = x.shape[0], h = x.shape[1], wd = x.shape[2];
    const std::size_t c_out = w.shape[3];

    std::vector<ComplexGrid> xhat(c_in);
    for (std::size_t ci = 0; ci < c_in; ++ci) {
        RealTensor plane({h, wd});
        std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(ci * h * wd),
                  x.data.begin() + static_cast<std::ptrdiff_t>((ci + 1) * h * wd), plane.data.begin());
        xhat[ci] = dft2(plane);
    }

    RealTensor y({c_out, h, wd}, 0.0);
    for (std::size_t co = 0; co < c_out; ++co) {
        ComplexGrid acc(h, wd);
        for (std::size_t ci = 0; ci < c_in; ++ci) {
            const ComplexGrid what = dft2(embed_kernel_circular(w, ci, co, h, wd));
            for (std::size_t i = 0; i < acc.numel(); ++i)
                acc.data[i] += std::conj(what.data[i]) * xhat[ci].data[i];
        }
        const ComplexGrid plane = idft2(acc);
        for (std::size_t i = 0; i < plane.numel(); ++i) y.data[co * h * wd + i] = plane.data[i].real();
    }
    return y;
}

}  // namespace fdconv

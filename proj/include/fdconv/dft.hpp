#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdconv/tensor.hpp"

namespace fdconv {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 transform, in place.  sign = -1 forward, +1 inverse.
// No normalization on either direction.
inline void fft_pow2(std::vector<Complex>& a, int sign) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * kPi / static_cast<double>(len);
        const Complex wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            Complex w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const Complex u = a[i + j];
                const Complex v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// O(n^2) fallback for non power-of-two lengths.  Twiddles are computed from
// the exact angle per index rather than by repeated multiplication.
inline void dft_naive(std::vector<Complex>& a, int sign) {
    const std::size_t n = a.size();
    std::vector<Complex> tw(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double ang = sign * 2.0 * kPi * static_cast<double>(k) / static_cast<double>(n);
        tw[k] = Complex(std::cos(ang), std::sin(ang));
    }
    std::vector<Complex> out(n, Complex(0.0, 0.0));
    for (std::size_t k = 0; k < n; ++k) {
        Complex s(0.0, 0.0);
        for (std::size_t j = 0; j < n; ++j) s += a[j] * tw[(j * k) % n];
        out[k] = s;
    }
    a = std::move(out);
}

inline void transform_1d(std::vector<Complex>& a, int sign) {
    if (a.size() <= 1) return;
    if (is_pow2(a.size()))
        fft_pow2(a, sign);
    else
        dft_naive(a, sign);
}

// Row-column decomposition of the 2-D transform.  No normalization.
inline void transform_2d(ComplexGrid& g, int sign) {
    std::vector<Complex> buf(std::max(g.rows, g.cols));
    for (std::size_t r = 0; r < g.rows; ++r) {
        buf.assign(g.data.begin() + static_cast<std::ptrdiff_t>(r * g.cols),
                   g.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * g.cols));
        transform_1d(buf, sign);
        std::copy(buf.begin(), buf.end(), g.data.begin() + static_cast<std::ptrdiff_t>(r * g.cols));
    }
    for (std::size_t c = 0; c < g.cols; ++c) {
        buf.resize(g.rows);
        for (std::size_t r = 0; r < g.rows; ++r) buf[r] = g.at(r, c);
        transform_1d(buf, sign);
        for (std::size_t r = 0; r < g.rows; ++r) g.at(r, c) = buf[r];
    }
}

}  // namespace detail

// Forward 2-D transform of a real H x W grid:
//   F[u,v] = sum_{x,y} f[x,y] exp(-2*pi*i*(u*x/H + v*y/W))
// Unnormalized; the inverse carries the full 1/(H*W) factor, so
// idft2(dft2(x)) == x.
inline ComplexGrid dft2(const RealTensor& x) {
    if (x.rank() != 2)
        throw std::invalid_argument("dft2: expected rank-2 input, got shape " + shape_str(x.shape));
    require_finite(x, "dft2");
    ComplexGrid g(x.shape[0], x.shape[1]);
    for (std::size_t i = 0; i < x.numel(); ++i) g.data[i] = Complex(x.data[i], 0.0);
    detail::transform_2d(g, -1);
    return g;
}

inline ComplexGrid dft2(const ComplexGrid& x) {
    require_finite(x, "dft2");
    ComplexGrid g = x;
    detail::transform_2d(g, -1);
    return g;
}

// Inverse 2-D transform, normalized by 1/(rows*cols).
inline ComplexGrid idft2(const ComplexGrid& f) {
    require_finite(f, "idft2");
    ComplexGrid g = f;
    detail::transform_2d(g, +1);
    const double scale = 1.0 / static_cast<double>(g.rows * g.cols);
    for (Complex& v : g.data) v *= scale;
    return g;
}

// Extract the real part, checking that the imaginary residue is numerical
// noise only (e.g. after inverting a Hermitian-symmetric spectrum).
inline RealTensor real_part(const ComplexGrid& g, double tol, const char* what) {
    RealTensor out({g.rows, g.cols});
    double worst = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) {
        worst = std::max(worst, std::abs(g.data[i].imag()));
        out.data[i] = g.data[i].real();
    }
    if (worst > tol)
        throw std::runtime_error(std::string(what) + ": imaginary residue " + std::to_string(worst) +
                                 " exceeds tolerance");
    return out;
}

}  // namespace fdconv

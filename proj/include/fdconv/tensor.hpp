#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fdconv {

using Complex = std::complex<double>;

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

// Dense row-major tensor of 64-bit reals.
struct RealTensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    RealTensor() = default;
    explicit RealTensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(shape_numel(shape), fill) {}
    RealTensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw std::invalid_argument("RealTensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool empty() const { return data.empty(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    double& operator()(std::size_t i) { return data[i]; }
    double operator()(std::size_t i) const { return data[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
};

// Row-major grid of complex values.
struct ComplexGrid {
    std::size_t rows = 0, cols = 0;
    std::vector<Complex> data;

    ComplexGrid() = default;
    ComplexGrid(std::size_t m, std::size_t n, Complex fill = Complex(0.0, 0.0))
        : rows(m), cols(n), data(m * n, fill) {}

    Complex& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    Complex at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::size_t numel() const { return data.size(); }
};

inline bool same_shape(const RealTensor& a, const RealTensor& b) { return a.shape == b.shape; }

// Numerically stable logistic function.
inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline bool all_finite(const RealTensor& t) {
    return std::all_of(t.data.begin(), t.data.end(), [](double v) { return std::isfinite(v); });
}

inline bool all_finite(const ComplexGrid& g) {
    return std::all_of(g.data.begin(), g.data.end(),
                       [](Complex v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); });
}

inline void require_finite(const RealTensor& t, const char* what) {
    if (!all_finite(t)) throw std::invalid_argument(std::string(what) + ": non-finite input value");
}

inline void require_finite(const ComplexGrid& g, const char* what) {
    if (!all_finite(g)) throw std::invalid_argument(std::string(what) + ": non-finite input value");
}

inline double dot(const RealTensor& a, const RealTensor& b) {
    if (a.numel() != b.numel())
        throw std::invalid_argument("dot: size mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double frob_norm(const RealTensor& a) { return std::sqrt(dot(a, a)); }

inline double max_abs(const RealTensor& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}

inline double max_abs_diff(const RealTensor& a, const RealTensor& b) {
    if (a.numel() != b.numel())
        throw std::invalid_argument("max_abs_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

inline RealTensor& add_inplace(RealTensor& a, const RealTensor& b) {
    if (a.numel() != b.numel())
        throw std::invalid_argument("add_inplace: size mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    for (std::size_t i = 0; i < a.numel(); ++i) a.data[i] += b.data[i];
    return a;
}

inline RealTensor& axpy_inplace(RealTensor& a, double c, const RealTensor& b) {
    if (a.numel() != b.numel()) throw std::invalid_argument("axpy_inplace: size mismatch");
    for (std::size_t i = 0; i < a.numel(); ++i) a.data[i] += c * b.data[i];
    return a;
}

inline RealTensor scaled(const RealTensor& a, double c) {
    RealTensor out = a;
    for (double& v : out.data) v *= c;
    return out;
}

inline RealTensor matmul2(const RealTensor& a, const RealTensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
        throw std::invalid_argument("matmul2: incompatible shapes " + shape_str(a.shape) + " x " +
                                    shape_str(b.shape));
    RealTensor out({a.shape[0], b.shape[1]}, 0.0);
    for (std::size_t i = 0; i < a.shape[0]; ++i)
        for (std::size_t k = 0; k < a.shape[1]; ++k) {
            const double av = a(i, k);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < b.shape[1]; ++j) out(i, j) += av * b(k, j);
        }
    return out;
}

inline RealTensor transpose2(const RealTensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose2: expected rank-2, got " + shape_str(a.shape));
    RealTensor out({a.shape[1], a.shape[0]});
    for (std::size_t i = 0; i < a.shape[0]; ++i)
        for (std::size_t j = 0; j < a.shape[1]; ++j) out(j, i) = a(i, j);
    return out;
}

// Temperature softmax over a flat vector, stabilized by max subtraction.
inline RealTensor softmax_vec(const RealTensor& z, double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw std::invalid_argument("softmax: temperature must be positive and finite");
    RealTensor y(z.shape);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : z.data) m = std::max(m, v / tau);
    double sum = 0.0;
    for (std::size_t i = 0; i < z.numel(); ++i) {
        y.data[i] = std::exp(z.data[i] / tau - m);
        sum += y.data[i];
    }
    for (double& v : y.data) v /= sum;
    return y;
}

// --- numpy-style broadcasting over equal-rank shapes -----------------------
//
// Two shapes broadcast when every dimension pair is equal or one side is 1.
// Used by the tape's add/multiply; callers insert explicit reshapes to align
// ranks first.

inline bool broadcast_compatible(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t d = 0; d < a.size(); ++d)
        if (a[d] != b[d] && a[d] != 1 && b[d] != 1) return false;
    return true;
}

inline std::vector<std::size_t> broadcast_shape(const std::vector<std::size_t>& a,
                                                const std::vector<std::size_t>& b) {
    if (!broadcast_compatible(a, b))
        throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
    std::vector<std::size_t> out(a.size());
    for (std::size_t d = 0; d < a.size(); ++d) out[d] = std::max(a[d], b[d]);
    return out;
}

namespace detail {
// Offset of the broadcast source element feeding output position `idx`.
inline std::size_t source_offset(const std::vector<std::size_t>& idx, const std::vector<std::size_t>& shape) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) off = off * shape[d] + (shape[d] == 1 ? 0 : idx[d]);
    return off;
}

inline void advance_index(std::vector<std::size_t>& idx, const std::vector<std::size_t>& shape) {
    for (std::size_t d = shape.size(); d-- > 0;) {
        if (++idx[d] < shape[d]) return;
        idx[d] = 0;
    }
}
}  // namespace detail

template <typename BinaryOp>
RealTensor broadcast_binary(const RealTensor& a, const RealTensor& b, BinaryOp op) {
    if (a.shape == b.shape) {
        RealTensor out(a.shape);
        for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = op(a.data[i], b.data[i]);
        return out;
    }
    auto out_shape = broadcast_shape(a.shape, b.shape);
    RealTensor out(out_shape);
    std::vector<std::size_t> idx(out_shape.size(), 0);
    for (std::size_t lin = 0; lin < out.numel(); ++lin) {
        out.data[lin] = op(a.data[detail::source_offset(idx, a.shape)],
                           b.data[detail::source_offset(idx, b.shape)]);
        detail::advance_index(idx, out_shape);
    }
    return out;
}

// Adjoint of broadcasting: sum `g` over the axes the source had extent 1 on.
inline RealTensor reduce_to_shape(const RealTensor& g, const std::vector<std::size_t>& target) {
    if (g.shape == target) return g;
    if (!broadcast_compatible(g.shape, target))
        throw std::invalid_argument("reduce_to_shape: incompatible shapes " + shape_str(g.shape) + " vs " +
                                    shape_str(target));
    RealTensor out(target, 0.0);
    std::vector<std::size_t> idx(g.shape.size(), 0);
    for (std::size_t lin = 0; lin < g.numel(); ++lin) {
        out.data[detail::source_offset(idx, target)] += g.data[lin];
        detail::advance_index(idx, g.shape);
    }
    return out;
}

}  // namespace fdconv

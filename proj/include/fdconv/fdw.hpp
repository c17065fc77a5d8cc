#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdconv/dft.hpp"
#include "fdconv/rng.hpp"
#include "fdconv/tensor.hpp"

namespace fdconv {

// A bank of n candidate kernels of shape (k, k, C_in, C_out) is parameterized
// in the frequency domain of one shared (k*C_in) x (k*C_out) grid.  Real
// spatial grids force conjugate symmetry, so the free parameters are grouped
// into "units": a conjugate pair of bins carries two reals (Re, Im of the
// representative bin), a self-conjugate bin carries one.  Units are sorted by
// the L2 norm of their centered index and split into n disjoint groups of
// near-equal parameter count; each group, inverse-transformed alone and cut
// into k x k tiles, yields one kernel.  Total parameter count is exactly
// k*k*C_in*C_out regardless of n, and distinct kernels occupy disjoint
// frequency supports.

struct FourierIndex {
    int u = 0;  // centered row frequency, in [-floor(M/2), ceil(M/2) - 1]
    int v = 0;  // centered column frequency
};

struct SpectralUnit {
    FourierIndex rep;       // representative bin (first in sort order)
    FourierIndex partner;   // conjugate bin; equals rep when self-conjugate
    bool self_conjugate = false;
    std::int64_t radius_sq = 0;   // |rep|^2, exact integer sort key
    std::size_t param_offset = 0; // position of this unit's reals in the bank
    int param_count = 0;          // 1 (self-conjugate) or 2 (pair)
};

struct IndexTable {
    int k = 0, c_in = 0, c_out = 0;
    std::size_t rows = 0, cols = 0;  // rows = k*c_in, cols = k*c_out
    std::vector<SpectralUnit> units; // ascending (radius_sq, u, v) of rep
    std::size_t param_total = 0;     // == rows * cols
};

namespace detail {

inline int center_index(std::size_t raw, std::size_t n) {
    return raw < (n + 1) / 2 ? static_cast<int>(raw) : static_cast<int>(raw) - static_cast<int>(n);
}

inline std::size_t raw_index(int centered, std::size_t n) {
    return centered >= 0 ? static_cast<std::size_t>(centered)
                         : static_cast<std::size_t>(centered + static_cast<int>(n));
}

}  // namespace detail

inline IndexTable build_index_table(int k, int c_in, int c_out) {
    if (k < 1 || k % 2 == 0)
        throw std::invalid_argument("build_index_table: kernel extent must be odd and positive, got " +
                                    std::to_string(k));
    if (c_in < 1 || c_out < 1)
        throw std::invalid_argument("build_index_table: channel counts must be positive");

    IndexTable t;
    t.k = k;
    t.c_in = c_in;
    t.c_out = c_out;
    t.rows = static_cast<std::size_t>(k) * static_cast<std::size_t>(c_in);
    t.cols = static_cast<std::size_t>(k) * static_cast<std::size_t>(c_out);
    const std::size_t m = t.rows, n = t.cols;

    struct Entry {
        int u, v;
        std::int64_t r2;
    };
    std::vector<Entry> entries;
    entries.reserve(m * n);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            const int u = detail::center_index(r, m), v = detail::center_index(c, n);
            entries.push_back({u, v, static_cast<std::int64_t>(u) * u + static_cast<std::int64_t>(v) * v});
        }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.r2 != b.r2) return a.r2 < b.r2;
        if (a.u != b.u) return a.u < b.u;
        return a.v < b.v;
    });

    std::vector<char> visited(m * n, 0);
    std::size_t offset = 0;
    for (const Entry& e : entries) {
        const std::size_t rr = detail::raw_index(e.u, m), rc = detail::raw_index(e.v, n);
        const std::size_t raw = rr * n + rc;
        if (visited[raw]) continue;
        // Conjugate partner of (u, v) is (-u, -v) modulo the grid.
        const std::size_t prr = (m - rr) % m, prc = (n - rc) % n;
        const std::size_t praw = prr * n + prc;

        SpectralUnit unit;
        unit.rep = {e.u, e.v};
        unit.partner = {detail::center_index(prr, m), detail::center_index(prc, n)};
        unit.self_conjugate = praw == raw;
        unit.radius_sq = e.r2;
        unit.param_offset = offset;
        unit.param_count = unit.self_conjugate ? 1 : 2;
        visited[raw] = 1;
        visited[praw] = 1;
        offset += static_cast<std::size_t>(unit.param_count);
        t.units.push_back(unit);
    }
    t.param_total = offset;
    if (t.param_total != m * n)
        throw std::runtime_error("build_index_table: parameter accounting failed, " +
                                 std::to_string(t.param_total) + " != " + std::to_string(m * n));
    return t;
}

struct GroupAssignment {
    IndexTable table;
    int group_count = 0;
    std::vector<std::vector<std::size_t>> units_in_group;  // unit indices, ascending
    std::vector<std::size_t> group_param_count;
};

// Greedy low-to-high split.  Each group takes consecutive sorted units while
// that keeps it at or strictly closer to the recomputed per-group target; ties
// stop early, so groups never exceed their target and sizes stay within 2 of
// each other.
inline GroupAssignment assign_groups(const IndexTable& table, int n) {
    if (n < 1)
        throw std::invalid_argument("assign_groups: group count must be positive, got " + std::to_string(n));
    if (static_cast<std::size_t>(n) > table.units.size())
        throw std::invalid_argument("assign_groups: " + std::to_string(n) + " groups requested but only " +
                                    std::to_string(table.units.size()) + " spectral units exist for k=" +
                                    std::to_string(table.k) + ", c_in=" + std::to_string(table.c_in) +
                                    ", c_out=" + std::to_string(table.c_out));

    GroupAssignment asg;
    asg.table = table;
    asg.group_count = n;
    asg.units_in_group.resize(static_cast<std::size_t>(n));
    asg.group_param_count.assign(static_cast<std::size_t>(n), 0);

    std::size_t next = 0, remaining = table.param_total;
    for (int g = 0; g < n; ++g) {
        const std::size_t groups_left = static_cast<std::size_t>(n - g);
        const std::size_t target = (remaining + groups_left - 1) / groups_left;
        std::size_t count = 0;
        while (next < table.units.size()) {
            // Leave at least one unit for every remaining group.
            if (count > 0 && table.units.size() - next <= groups_left - 1) break;
            const std::size_t size = static_cast<std::size_t>(table.units[next].param_count);
            const bool fits = count + size <= target;
            const bool closer = count + size > target && (count + size - target) < (target - count);
            if (count > 0 && !fits && !closer) break;
            asg.units_in_group[static_cast<std::size_t>(g)].push_back(next);
            count += size;
            ++next;
        }
        asg.group_param_count[static_cast<std::size_t>(g)] = count;
        remaining -= count;
    }
    if (next != table.units.size() || remaining != 0)
        throw std::runtime_error("assign_groups: grouping did not cover all units");
    return asg;
}

// The bank: one real parameter vector in unit-major order (layout depends on
// the index table only, not on the group count).
struct SpectralBank {
    RealTensor params;  // shape (param_total)
};

inline void check_bank(const SpectralBank& bank, const IndexTable& table, const char* what) {
    if (bank.params.rank() != 1 || bank.params.numel() != table.param_total)
        throw std::invalid_argument(std::string(what) + ": bank has " + std::to_string(bank.params.numel()) +
                                    " parameters, table expects " + std::to_string(table.param_total));
}

// Place one group's coefficients on an otherwise-zero complex grid.
inline ComplexGrid scatter_group(const SpectralBank& bank, const GroupAssignment& asg, int g) {
    check_bank(bank, asg.table, "scatter_group");
    const std::size_t m = asg.table.rows, n = asg.table.cols;
    ComplexGrid grid(m, n);
    for (std::size_t ui : asg.units_in_group.at(static_cast<std::size_t>(g))) {
        const SpectralUnit& unit = asg.table.units[ui];
        const std::size_t rr = detail::raw_index(unit.rep.u, m), rc = detail::raw_index(unit.rep.v, n);
        if (unit.self_conjugate) {
            grid.at(rr, rc) = Complex(bank.params[unit.param_offset], 0.0);
        } else {
            const double re = bank.params[unit.param_offset];
            const double im = bank.params[unit.param_offset + 1];
            grid.at(rr, rc) = Complex(re, im);
            grid.at(detail::raw_index(unit.partner.u, m), detail::raw_index(unit.partner.v, n)) =
                Complex(re, -im);
        }
    }
    return grid;
}

// Cut the (k*C_in) x (k*C_out) grid into k x k tiles: tile (r, c) becomes the
// filter connecting input channel r to output channel c.
inline RealTensor crop_to_weight(const RealTensor& grid, int k, int c_in, int c_out) {
    const std::size_t ku = static_cast<std::size_t>(k);
    if (grid.rank() != 2 || grid.shape[0] != ku * static_cast<std::size_t>(c_in) ||
        grid.shape[1] != ku * static_cast<std::size_t>(c_out))
        throw std::invalid_argument("crop_to_weight: grid " + shape_str(grid.shape) + " does not tile k=" +
                                    std::to_string(k));
    RealTensor w({ku, ku, static_cast<std::size_t>(c_in), static_cast<std::size_t>(c_out)});
    for (std::size_t a = 0; a < ku; ++a)
        for (std::size_t b = 0; b < ku; ++b)
            for (std::size_t r = 0; r < static_cast<std::size_t>(c_in); ++r)
                for (std::size_t c = 0; c < static_cast<std::size_t>(c_out); ++c)
                    w(a, b, r, c) = grid(r * ku + a, c * ku + b);
    return w;
}

inline RealTensor uncrop_to_grid(const RealTensor& w) {
    if (w.rank() != 4 || w.shape[0] != w.shape[1])
        throw std::invalid_argument("uncrop_to_grid: expected (k,k,C_in,C_out), got " + shape_str(w.shape));
    const std::size_t k = w.shape[0], c_in = w.shape[2], c_out = w.shape[3];
    RealTensor grid({k * c_in, k * c_out});
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b)
            for (std::size_t r = 0; r < c_in; ++r)
                for (std::size_t c = 0; c < c_out; ++c)
                    grid(r * k + a, c * k + b) = w(a, b, r, c);
    return grid;
}

// Materialize group g as a spatial kernel (k, k, C_in, C_out).
inline RealTensor materialize_group(const SpectralBank& bank, const GroupAssignment& asg, int g) {
    const ComplexGrid grid = scatter_group(bank, asg, g);
    const ComplexGrid spatial = idft2(grid);
    // Conjugate symmetry makes the inverse exactly real; allow rounding noise.
    const double tol = 1e-9 * std::max(1.0, max_abs(bank.params));
    const RealTensor s = real_part(spatial, tol, "materialize_group");
    return crop_to_weight(s, asg.table.k, asg.table.c_in, asg.table.c_out);
}

inline std::vector<RealTensor> materialize_weights(const SpectralBank& bank, const GroupAssignment& asg) {
    std::vector<RealTensor> out;
    out.reserve(static_cast<std::size_t>(asg.group_count));
    for (int g = 0; g < asg.group_count; ++g) out.push_back(materialize_group(bank, asg, g));
    return out;
}

inline RealTensor mix_weights(const std::vector<RealTensor>& weights, const RealTensor& pi) {
    if (pi.numel() != weights.size())
        throw std::invalid_argument("mix_weights: " + std::to_string(pi.numel()) + " coefficients for " +
                                    std::to_string(weights.size()) + " kernels");
    if (weights.empty()) throw std::invalid_argument("mix_weights: empty kernel list");
    RealTensor out(weights[0].shape, 0.0);
    for (std::size_t i = 0; i < weights.size(); ++i) axpy_inplace(out, pi[i], weights[i]);
    return out;
}

// Adjoint of materialize_group: pull a spatial-kernel gradient back to the
// bank coefficients of group g.  Returns a full-length bank gradient that is
// zero outside the group, so contributions from all groups can be summed.
inline RealTensor fdw_adjoint(const RealTensor& grad_weight, const GroupAssignment& asg, int g) {
    const IndexTable& t = asg.table;
    const RealTensor grid = uncrop_to_grid(grad_weight);
    if (grid.shape[0] != t.rows || grid.shape[1] != t.cols)
        throw std::invalid_argument("fdw_adjoint: gradient " + shape_str(grad_weight.shape) +
                                    " does not match table (k=" + std::to_string(t.k) + ")");
    const ComplexGrid ghat = dft2(grid);
    const double inv = 1.0 / static_cast<double>(t.rows * t.cols);

    RealTensor out({t.param_total}, 0.0);
    for (std::size_t ui : asg.units_in_group.at(static_cast<std::size_t>(g))) {
        const SpectralUnit& unit = t.units[ui];
        const Complex c = ghat.at(detail::raw_index(unit.rep.u, t.rows), detail::raw_index(unit.rep.v, t.cols));
        if (unit.self_conjugate) {
            out[unit.param_offset] = inv * c.real();
        } else {
            out[unit.param_offset] = 2.0 * inv * c.real();
            out[unit.param_offset + 1] = 2.0 * inv * c.imag();
        }
    }
    return out;
}

// Initialize the bank as the spectrum of a Kaiming-scaled spatial grid, so the
// ungrouped materialization reproduces a familiar random init exactly.
inline SpectralBank init_spectral_bank(const IndexTable& table, Rng& rng) {
    const double stddev =
        std::sqrt(2.0 / (static_cast<double>(table.k) * table.k * static_cast<double>(table.c_in)));
    RealTensor spatial({table.rows, table.cols});
    for (double& v : spatial.data) v = rng.normal(0.0, stddev);
    const ComplexGrid spec = dft2(spatial);

    SpectralBank bank;
    bank.params = RealTensor({table.param_total});
    for (const SpectralUnit& unit : table.units) {
        const Complex c =
            spec.at(detail::raw_index(unit.rep.u, table.rows), detail::raw_index(unit.rep.v, table.cols));
        if (unit.self_conjugate) {
            bank.params[unit.param_offset] = c.real();
        } else {
            bank.params[unit.param_offset] = c.real();
            bank.params[unit.param_offset + 1] = c.imag();
        }
    }
    return bank;
}

}  // namespace fdconv

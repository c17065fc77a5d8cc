#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdconv/dft.hpp"
#include "fdconv/fbm.hpp"
#include "fdconv/fdw.hpp"
#include "fdconv/layer.hpp"
#include "fdconv/tensor.hpp"

namespace fdconv {

// Structural analysis of a kernel bank: frequency responses, pairwise
// similarity, and the invariant metrics (orthogonality, spectral
// disjointness, parameter budget) that characterize the construction.

// Magnitude response of one kernel on a padded grid: each k x k filter is
// zero-embedded into pad x pad, transformed, and the magnitudes are averaged
// over all (input, output) channel pairs.
inline RealTensor weight_frequency_response(const RealTensor& w, std::size_t pad) {
    if (w.rank() != 4 || w.shape[0] != w.shape[1])
        throw std::invalid_argument("weight_frequency_response: expected (k,k,C_in,C_out), got " +
                                    shape_str(w.shape));
    const std::size_t k = w.shape[0], c_in = w.shape[2], c_out = w.shape[3];
    if (pad < k)
        throw std::invalid_argument("weight_frequency_response: pad " + std::to_string(pad) +
                                    " smaller than kernel " + std::to_string(k));
    RealTensor acc({pad, pad}, 0.0);
    RealTensor plane({pad, pad}, 0.0);
    for (std::size_t ci = 0; ci < c_in; ++ci)
        for (std::size_t co = 0; co < c_out; ++co) {
            std::fill(plane.data.begin(), plane.data.end(), 0.0);
            for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < k; ++b) plane(a, b) = w(a, b, ci, co);
            const ComplexGrid spec = dft2(plane);
            for (std::size_t i = 0; i < spec.numel(); ++i) acc.data[i] += std::abs(spec.data[i]);
        }
    const double inv = 1.0 / static_cast<double>(c_in * c_out);
    for (double& v : acc.data) v *= inv;
    return acc;
}

// Magnitude spectrum of a kernel on its native (k*C_in) x (k*C_out) grid, the
// domain in which the disjoint construction lives.  Kernels built from
// different groups have pointwise-disjoint supports here.
inline RealTensor weight_native_spectrum(const RealTensor& w) {
    const ComplexGrid spec = dft2(uncrop_to_grid(w));
    RealTensor out({spec.rows, spec.cols});
    for (std::size_t i = 0; i < spec.numel(); ++i) out.data[i] = std::abs(spec.data[i]);
    return out;
}

struct SimilarityReport {
    RealTensor matrix;             // (n, n) cosine similarities
    std::vector<char> zero_norm;   // kernels with exactly zero norm, flagged
    double max_offdiag_abs = 0.0;  // over pairs of nonzero-norm kernels
};

inline SimilarityReport pairwise_cosine_similarity(const std::vector<RealTensor>& weights) {
    const std::size_t n = weights.size();
    if (n == 0) throw std::invalid_argument("pairwise_cosine_similarity: empty kernel list");
    SimilarityReport rep;
    rep.matrix = RealTensor({n, n}, 0.0);
    rep.zero_norm.assign(n, 0);
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (weights[i].shape != weights[0].shape)
            throw std::invalid_argument("pairwise_cosine_similarity: kernel " + std::to_string(i) +
                                        " shape " + shape_str(weights[i].shape) + " differs from " +
                                        shape_str(weights[0].shape));
        norms[i] = frob_norm(weights[i]);
        if (norms[i] == 0.0) rep.zero_norm[i] = 1;
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (rep.zero_norm[i] || rep.zero_norm[j]) continue;  // flagged, not silently 1
            const double c = dot(weights[i], weights[j]) / (norms[i] * norms[j]);
            rep.matrix(i, j) = c;
            if (i != j) rep.max_offdiag_abs = std::max(rep.max_offdiag_abs, std::abs(c));
        }
    return rep;
}

// Largest pointwise product between native magnitude spectra of distinct
// kernels; exactly-disjoint supports give 0 up to transform round-off.
inline double max_native_spectrum_overlap(const std::vector<RealTensor>& weights) {
    if (weights.size() < 2) return 0.0;
    std::vector<RealTensor> spectra;
    spectra.reserve(weights.size());
    for (const RealTensor& w : weights) spectra.push_back(weight_native_spectrum(w));
    double worst = 0.0;
    for (std::size_t i = 0; i < spectra.size(); ++i)
        for (std::size_t j = i + 1; j < spectra.size(); ++j)
            for (std::size_t t = 0; t < spectra[i].numel(); ++t)
                worst = std::max(worst, spectra[i].data[t] * spectra[j].data[t]);
    return worst;
}

// Energy of a signal per frequency band (Parseval side).
inline RealTensor band_energy(const RealTensor& x, const BandMaskSet& set) {
    if (x.rank() != 3) throw std::invalid_argument("band_energy: input must be (C,H,W)");
    RealTensor e({set.band_count()}, 0.0);
    const std::vector<RealTensor> parts = band_split(x, set);
    for (std::size_t b = 0; b < parts.size(); ++b) e[b] = dot(parts[b], parts[b]);
    return e;
}

// --- CSV I/O ----------------------------------------------------------------
//
// All CSVs carry a header row; values print with 17 significant digits so a
// read-back reproduces the doubles bit for bit.

inline std::string format_g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_matrix_csv(const std::string& path, const RealTensor& m, bool row_labels) {
    if (m.rank() != 2) throw std::invalid_argument("write_matrix_csv: expected rank-2, got " +
                                                   shape_str(m.shape));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_matrix_csv: cannot open " + path);
    if (row_labels) out << "i\\j";
    for (std::size_t j = 0; j < m.shape[1]; ++j) {
        if (j || row_labels) out << ',';
        out << j;
    }
    out << '\n';
    for (std::size_t i = 0; i < m.shape[0]; ++i) {
        if (row_labels) out << i << ',';
        for (std::size_t j = 0; j < m.shape[1]; ++j) {
            if (j) out << ',';
            out << format_g17(m(i, j));
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write_matrix_csv: write failed for " + path);
}

inline RealTensor read_matrix_csv(const std::string& path, bool row_labels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_matrix_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_matrix_csv: missing header in " + path);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool first = true;
        while (std::getline(ss, cell, ',')) {
            if (first && row_labels) {
                first = false;
                continue;
            }
            first = false;
            std::size_t pos = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &pos);
            } catch (const std::exception&) {
                pos = 0;  // unparseable; report below with the cell text
            }
            if (cell.empty() || pos != cell.size())
                throw std::runtime_error("read_matrix_csv: bad cell '" + cell + "' in " + path);
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("read_matrix_csv: no data rows in " + path);
    const std::size_t cols = rows[0].size();
    RealTensor m({rows.size(), cols});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != cols) throw std::runtime_error("read_matrix_csv: ragged rows in " + path);
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
    }
    return m;
}

// --- full report ------------------------------------------------------------

struct AnalysisReport {
    SimilarityReport similarity;
    double native_overlap = 0.0;
    ParamCount params;
    std::size_t spectra_written = 0;
};

// Writes similarity.csv and spectrum_<i>.csv (padded magnitude responses)
// into `dir` and returns the computed metrics.
inline AnalysisReport write_analysis_report(const std::string& dir, const LayerState& state,
                                            std::size_t pad) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::vector<RealTensor> weights = materialize_weights(state.bank, state.assignment);

    AnalysisReport rep;
    rep.similarity = pairwise_cosine_similarity(weights);
    rep.native_overlap = max_native_spectrum_overlap(weights);
    rep.params = param_count(state.config);

    write_matrix_csv((fs::path(dir) / "similarity.csv").string(), rep.similarity.matrix, true);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const RealTensor spec = weight_frequency_response(weights[i], pad);
        write_matrix_csv((fs::path(dir) / ("spectrum_" + std::to_string(i) + ".csv")).string(), spec,
                         false);
        ++rep.spectra_written;
    }
    return rep;
}

}  // namespace fdconv

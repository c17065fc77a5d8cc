#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdconv/fbm.hpp"
#include "fdconv/rng.hpp"
#include "fdconv/tensor.hpp"

namespace fdconv {

// Synthetic band-identification task: sample b is white noise confined to
// frequency band b (unit RMS, so total energy is not a shortcut feature),
// plus additive pixel noise.  The label is the band index.

struct BandDataset {
    std::size_t extent = 0;          // images are (1, extent, extent)
    std::size_t classes = 0;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    std::vector<RealTensor> images;
    std::vector<int> labels;
};

inline BandDataset gen_band_dataset(std::size_t count, std::size_t extent,
                                    const std::vector<double>& band_thresholds, double sigma,
                                    std::uint64_t seed) {
    if (count == 0) throw std::invalid_argument("gen_band_dataset: empty dataset");
    if (extent < 2) throw std::invalid_argument("gen_band_dataset: extent too small");
    const BandMaskSet masks = build_band_masks(extent, extent, band_thresholds);

    BandDataset ds;
    ds.extent = extent;
    ds.classes = masks.band_count();
    ds.sigma = sigma;
    ds.seed = seed;
    ds.images.reserve(count);
    ds.labels.reserve(count);

    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const int label = static_cast<int>(i % ds.classes);
        RealTensor noise({1, extent, extent});
        for (double& v : noise.data) v = rng.normal();
        RealTensor x = band_filter(noise, masks.masks[static_cast<std::size_t>(label)]);
        const double rms = frob_norm(x) / std::sqrt(static_cast<double>(x.numel()));
        if (rms > 0.0)
            for (double& v : x.data) v /= rms;
        if (sigma > 0.0)
            for (double& v : x.data) v += sigma * rng.normal();
        ds.images.push_back(std::move(x));
        ds.labels.push_back(label);
    }
    return ds;
}

// Deterministic 80/20 split: every fifth sample is held out.
inline bool is_heldout(std::size_t index) { return index % 5 == 4; }

inline std::vector<std::size_t> split_indices(const BandDataset& ds, bool heldout) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        if (is_heldout(i) == heldout) idx.push_back(i);
    return idx;
}

}  // namespace fdconv

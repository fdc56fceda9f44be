#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "diffsigma/image.hpp"
#include "diffsigma/noise.hpp"

namespace diffsigma {

// A sigma estimate in 0-255 units. For multichannel input the channels are
// estimated independently and sigma_hat is their arithmetic mean.
struct EstimatorResult {
    double sigma_hat = 0.0;
    std::vector<double> per_channel;
    std::string method;
};

namespace detail {

inline double sample_std(const std::vector<double>& values) {
    // Unbiased (n-1) convention.
    std::size_t n = values.size();
    if (n < 2) throw Error("estimator: need at least 2 values per channel");
    double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) {
        double d = v - mean;
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(n - 1));
}

inline double median_inplace(std::vector<double>& values) {
    std::size_t n = values.size();
    auto mid = values.begin() + n / 2;
    std::nth_element(values.begin(), mid, values.end());
    double hi = *mid;
    if (n % 2 == 1) return hi;
    double lo = *std::max_element(values.begin(), mid);
    return 0.5 * (lo + hi);
}

template <typename Raster>
std::vector<double> channel_values(const Raster& img, int c) {
    std::vector<double> values;
    values.reserve(img.pixel_count());
    for (std::size_t p = 0; p < img.pixel_count(); ++p)
        values.push_back(img.data[p * img.channels + c]);
    return values;
}

inline EstimatorResult combine(std::vector<double> per_channel, const char* method) {
    EstimatorResult r;
    r.per_channel = std::move(per_channel);
    r.sigma_hat = std::accumulate(r.per_channel.begin(), r.per_channel.end(), 0.0) /
                  static_cast<double>(r.per_channel.size());
    r.method = method;
    return r;
}

}  // namespace detail

// Analytic estimator: Var(n1 - n2) = 2 sigma^2, so the per-channel sample
// standard deviation of the difference divided by sqrt(2) recovers sigma.
inline EstimatorResult estimate_direct(const DifferenceImage& diff) {
    std::vector<double> per_channel;
    for (int c = 0; c < diff.channels; ++c) {
        auto values = detail::channel_values(diff, c);
        per_channel.push_back(detail::sample_std(values) / std::sqrt(2.0));
    }
    return detail::combine(std::move(per_channel), "direct");
}

// Robust variant: median absolute deviation with the 0.6745 normal
// consistency constant, then the same sqrt(2) correction.
inline EstimatorResult estimate_mad(const DifferenceImage& diff) {
    std::vector<double> per_channel;
    for (int c = 0; c < diff.channels; ++c) {
        auto values = detail::channel_values(diff, c);
        if (values.size() < 2) throw Error("estimate_mad: need at least 2 values");
        double med = detail::median_inplace(values);
        for (double& v : values) v = std::abs(v - med);
        double mad = detail::median_inplace(values);
        per_channel.push_back(mad / 0.6745 / std::sqrt(2.0));
    }
    return detail::combine(std::move(per_channel), "mad");
}

// Single-image baseline: sigma is taken as the smallest sample standard
// deviation over all non-overlapping p x p tiles. Texture inflates every
// tile's std, which is exactly the weakness the difference method removes.
inline EstimatorResult estimate_patch_min(const Image& noisy, int p) {
    if (p < 2) throw Error("estimate_patch_min: patch size must be >= 2");
    if (p > noisy.width || p > noisy.height)
        throw Error("estimate_patch_min: patch exceeds image size");
    std::vector<double> per_channel;
    std::vector<double> tile(static_cast<std::size_t>(p) * p);
    for (int c = 0; c < noisy.channels; ++c) {
        double best = std::numeric_limits<double>::infinity();
        for (int ty = 0; ty + p <= noisy.height; ty += p) {
            for (int tx = 0; tx + p <= noisy.width; tx += p) {
                std::size_t k = 0;
                for (int y = 0; y < p; ++y)
                    for (int x = 0; x < p; ++x)
                        tile[k++] = noisy.at(tx + x, ty + y, c);
                best = std::min(best, detail::sample_std(tile));
            }
        }
        per_channel.push_back(best);
    }
    return detail::combine(std::move(per_channel), "patchmin");
}

}  // namespace diffsigma

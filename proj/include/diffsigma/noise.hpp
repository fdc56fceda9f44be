#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "diffsigma/image.hpp"
#include "diffsigma/prng.hpp"
#include "diffsigma/tensor.hpp"

namespace diffsigma {

// Two independently noised renderings of one clean scene.
struct NoisyFramePair {
    Image frame1;
    Image frame2;
    double sigma_true = 0.0;  // 0-255 intensity units
    std::uint64_t seed1 = 0;
    std::uint64_t seed2 = 0;
    bool clipped = false;
};

// frame1 - frame2, elementwise. Contains only noise for unclipped pairs.
struct DifferenceImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;
    std::optional<double> sigma_true;  // carried label; absent for external pairs

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(width) * height;
    }
    std::size_t size() const { return pixel_count() * channels; }
    double at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

// Where a sampled patch came from (top-left corner in its source raster).
struct PatchOrigin {
    int x = 0;
    int y = 0;
};

// Training/inference batch of difference patches with labels.
struct PatchBatch {
    TensorF patches;                  // N x C x p x p
    std::vector<double> labels_sigma; // N
    std::vector<int> labels_class;    // N
    std::vector<PatchOrigin> origins; // N
    int patch_size = 0;
};

// out[i] = img[i] + sigma * n_i with n_i i.i.d. standard normal from `seed`.
// Each noise value is snapped to the 2^-20 intensity grid before the add, so
// for grid-aligned images (anything loaded from bytes or produced by
// to_gray) the sum is exact and (img+n1)-(img+n2) == n1-n2 bit for bit.
// That realizes the cancellation the difference pipeline is built on; the
// grid rounding perturbs the noise by at most 2^-21, which is invisible
// next to sigma >= a small fraction of an intensity step.
// clip=true clamps the result to [0,255] (imnoise-style), which trades that
// exactness away near saturation.
inline Image add_awgn(const Image& img, double sigma, std::uint64_t seed, bool clip = false) {
    if (sigma < 0.0) throw Error("add_awgn: sigma must be non-negative");
    Image out = img;
    if (sigma == 0.0 && !clip) return out;
    Prng rng(seed);
    for (double& v : out.data) {
        double noise = detail::snap_to_grid(sigma * rng.gaussian());
        v += noise;
        if (clip) v = std::clamp(v, 0.0, 255.0);
    }
    return out;
}

// Builds the two-frame input of the difference method. The per-frame seeds
// come from a documented split of base_seed, so pairs are independent and
// identical regardless of how synthesis tasks are scheduled.
inline NoisyFramePair make_frame_pair(const Image& img, double sigma,
                                      std::uint64_t base_seed, bool clip = false) {
    NoisyFramePair pair;
    pair.sigma_true = sigma;
    pair.seed1 = derive_seed(base_seed, 1);
    pair.seed2 = derive_seed(base_seed, 2);
    pair.clipped = clip;
    pair.frame1 = add_awgn(img, sigma, pair.seed1, clip);
    pair.frame2 = add_awgn(img, sigma, pair.seed2, clip);
    return pair;
}

inline DifferenceImage difference_of(const Image& frame1, const Image& frame2,
                                     std::optional<double> sigma_true = std::nullopt) {
    if (frame1.width != frame2.width || frame1.height != frame2.height ||
        frame1.channels != frame2.channels)
        throw Error("difference: frame shapes do not match");
    DifferenceImage diff;
    diff.width = frame1.width;
    diff.height = frame1.height;
    diff.channels = frame1.channels;
    diff.sigma_true = sigma_true;
    diff.data.resize(frame1.size());
    for (std::size_t i = 0; i < diff.data.size(); ++i)
        diff.data[i] = frame1.data[i] - frame2.data[i];
    return diff;
}

inline DifferenceImage difference(const NoisyFramePair& pair) {
    return difference_of(pair.frame1, pair.frame2, pair.sigma_true);
}

// n patches of size p x p with uniform random top-left corners (with
// replacement), deterministic in `seed`. Labels carry the difference
// image's sigma; class labels default to 0 and are assigned by the
// dataset builder.
inline PatchBatch sample_patches(const DifferenceImage& diff, int p, int n,
                                 std::uint64_t seed) {
    if (p <= 0) throw Error("sample_patches: patch size must be positive");
    if (p > diff.width || p > diff.height)
        throw Error("sample_patches: patch " + std::to_string(p) + " exceeds image " +
                    std::to_string(diff.width) + "x" + std::to_string(diff.height));
    if (n < 0) throw Error("sample_patches: negative count");
    PatchBatch batch;
    batch.patch_size = p;
    batch.patches = TensorF(n, diff.channels, p, p);
    batch.labels_sigma.assign(n, diff.sigma_true.value_or(0.0));
    batch.labels_class.assign(n, 0);
    batch.origins.resize(n);
    Prng rng(seed);
    for (int i = 0; i < n; ++i) {
        int x0 = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(diff.width - p + 1)));
        int y0 = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(diff.height - p + 1)));
        batch.origins[i] = {x0, y0};
        for (int c = 0; c < diff.channels; ++c)
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x)
                    batch.patches.at(i, c, y, x) =
                        static_cast<float>(diff.at(x0 + x, y0 + y, c));
    }
    return batch;
}

}  // namespace diffsigma

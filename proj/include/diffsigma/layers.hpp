#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "diffsigma/parallel.hpp"
#include "diffsigma/prng.hpp"
#include "diffsigma/tensor.hpp"

namespace diffsigma {

// Weights + bias + Adam moment state for one layer.
// Conv weights are K x C x kh x kw; fully-connected weights are stored
// out-major as (O, F, 1, 1).
template <typename T>
struct LayerParams {
    Tensor<T> weights;
    Tensor<T> bias;
    Tensor<T> adam_m_w, adam_v_w;
    Tensor<T> adam_m_b, adam_v_b;
    std::int64_t step_count = 0;

    void init_moments() {
        adam_m_w = Tensor<T>(weights.n, weights.c, weights.h, weights.w);
        adam_v_w = adam_m_w;
        adam_m_b = Tensor<T>(bias.n, bias.c, bias.h, bias.w);
        adam_v_b = adam_m_b;
        step_count = 0;
    }
    void zero_grads() {
        weights.ensure_grad();
        weights.zero_grad();
        bias.ensure_grad();
        bias.zero_grad();
    }
};

// Kaiming-normal init (std = sqrt(2 / fan_in)), zero bias.
template <typename T>
LayerParams<T> make_conv_params(int out_ch, int in_ch, int kh, int kw, Prng& rng) {
    LayerParams<T> p;
    p.weights = Tensor<T>(out_ch, in_ch, kh, kw);
    p.bias = Tensor<T>::flat(1, out_ch);
    double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * kh * kw));
    for (T& v : p.weights.data) v = static_cast<T>(stddev * rng.gaussian());
    p.init_moments();
    return p;
}

template <typename T>
LayerParams<T> make_fc_params(int out_features, int in_features, Prng& rng) {
    LayerParams<T> p;
    p.weights = Tensor<T>(out_features, in_features, 1, 1);
    p.bias = Tensor<T>::flat(1, out_features);
    double stddev = std::sqrt(2.0 / static_cast<double>(in_features));
    for (T& v : p.weights.data) v = static_cast<T>(stddev * rng.gaussian());
    p.init_moments();
    return p;
}

namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Gathers one sample's receptive fields into a (C*kh*kw) x (out_h*out_w)
// column matrix; out-of-image taps are zero.
template <typename T>
void im2col(const Tensor<T>& x, int sample, int kh, int kw, int stride, int pad,
            int out_h, int out_w, T* col) {
    const int spatial = out_h * out_w;
    for (int c = 0; c < x.c; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = col + ((c * kh + ky) * kw + kx) * spatial;
                for (int oy = 0; oy < out_h; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= x.h) {
                        for (int ox = 0; ox < out_w; ++ox) *dst++ = T(0);
                        continue;
                    }
                    const T* row = &x.data[x.index(sample, c, iy, 0)];
                    for (int ox = 0; ox < out_w; ++ox) {
                        int ix = ox * stride - pad + kx;
                        *dst++ = (ix < 0 || ix >= x.w) ? T(0) : row[ix];
                    }
                }
            }
        }
    }
}

// Scatters a column-matrix gradient back onto the padded input raster.
template <typename T>
void col2im_accumulate(const T* col, int sample, int kh, int kw, int stride, int pad,
                       int out_h, int out_w, Tensor<T>& x_grad_owner) {
    const int spatial = out_h * out_w;
    for (int c = 0; c < x_grad_owner.c; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const T* src = col + ((c * kh + ky) * kw + kx) * spatial;
                for (int oy = 0; oy < out_h; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= x_grad_owner.h) {
                        src += out_w;
                        continue;
                    }
                    T* row = &x_grad_owner.grad[x_grad_owner.index(sample, c, iy, 0)];
                    for (int ox = 0; ox < out_w; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < x_grad_owner.w) row[ix] += src[ox];
                        ++src;
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2-D cross-correlation (no kernel flip) plus bias.
// out_h = floor((H + 2*pad - kh)/stride) + 1, and likewise for width.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const LayerParams<T>& p, int stride, int pad) {
    const int out_ch = p.weights.n, in_ch = p.weights.c;
    const int kh = p.weights.h, kw = p.weights.w;
    if (x.c != in_ch)
        throw Error("conv2d: input has " + std::to_string(x.c) + " channels, kernel expects " +
                    std::to_string(in_ch));
    if (stride < 1) throw Error("conv2d: stride must be >= 1");
    if (pad < 0) throw Error("conv2d: pad must be >= 0");
    if (x.h + 2 * pad < kh || x.w + 2 * pad < kw)
        throw Error("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                    " exceeds padded input " + x.shape_str());
    const int out_h = detail::conv_out_dim(x.h, kh, stride, pad);
    const int out_w = detail::conv_out_dim(x.w, kw, stride, pad);
    const int spatial = out_h * out_w;
    const int taps = in_ch * kh * kw;

    Tensor<T> y(x.n, out_ch, out_h, out_w);
    parallel_for(x.n, [&](std::int64_t sample) {
        std::vector<T> col(static_cast<std::size_t>(taps) * spatial);
        detail::im2col(x, static_cast<int>(sample), kh, kw, stride, pad, out_h, out_w, col.data());
        for (int k = 0; k < out_ch; ++k) {
            T* out = &y.data[y.index(static_cast<int>(sample), k, 0, 0)];
            const T bias = p.bias.data[k];
            for (int m = 0; m < spatial; ++m) out[m] = bias;
            const T* wrow = &p.weights.data[static_cast<std::size_t>(k) * taps];
            for (int r = 0; r < taps; ++r) {
                const T wv = wrow[r];
                const T* cr = &col[static_cast<std::size_t>(r) * spatial];
                for (int m = 0; m < spatial; ++m) out[m] += wv * cr[m];
            }
        }
    });
    return y;
}

// Exact gradients for input, weights and bias. Accumulates into the .grad
// members (callers zero them at the start of a step), so a tensor feeding
// several layers collects every contribution. Reduction order over the
// batch is fixed, making backward bit-deterministic for any thread count.
template <typename T>
void conv2d_backward(Tensor<T>& x, LayerParams<T>& p, const Tensor<T>& y,
                     int stride, int pad) {
    const int out_ch = p.weights.n, in_ch = p.weights.c;
    const int kh = p.weights.h, kw = p.weights.w;
    const int out_h = y.h, out_w = y.w;
    const int spatial = out_h * out_w;
    const int taps = in_ch * kh * kw;

    x.ensure_grad();
    p.weights.ensure_grad();
    p.bias.ensure_grad();

    // Columns for the whole batch; rebuilt here rather than cached from the
    // forward pass.
    std::vector<T> cols(static_cast<std::size_t>(x.n) * taps * spatial);
    parallel_for(x.n, [&](std::int64_t sample) {
        detail::im2col(x, static_cast<int>(sample), kh, kw, stride, pad, out_h, out_w,
                       &cols[static_cast<std::size_t>(sample) * taps * spatial]);
    });

    // Weight and bias gradients, parallel over output channels; each channel
    // sums samples in index order.
    parallel_for(out_ch, [&](std::int64_t k) {
        T* gw = &p.weights.grad[static_cast<std::size_t>(k) * taps];
        T gb = T(0);
        for (int sample = 0; sample < x.n; ++sample) {
            const T* gy = &y.grad[y.index(sample, static_cast<int>(k), 0, 0)];
            const T* col = &cols[static_cast<std::size_t>(sample) * taps * spatial];
            for (int m = 0; m < spatial; ++m) gb += gy[m];
            for (int r = 0; r < taps; ++r) {
                const T* cr = col + static_cast<std::size_t>(r) * spatial;
                T acc = T(0);
                for (int m = 0; m < spatial; ++m) acc += gy[m] * cr[m];
                gw[r] += acc;
            }
        }
        p.bias.grad[k] += gb;
    });

    // Input gradient, parallel over samples (disjoint writes).
    parallel_for(x.n, [&](std::int64_t sample) {
        std::vector<T> gcol(static_cast<std::size_t>(taps) * spatial, T(0));
        for (int r = 0; r < taps; ++r) {
            T* gr = &gcol[static_cast<std::size_t>(r) * spatial];
            for (int k = 0; k < out_ch; ++k) {
                const T wv = p.weights.data[static_cast<std::size_t>(k) * taps + r];
                const T* gy = &y.grad[y.index(static_cast<int>(sample), k, 0, 0)];
                for (int m = 0; m < spatial; ++m) gr[m] += wv * gy[m];
            }
        }
        detail::col2im_accumulate(gcol.data(), static_cast<int>(sample), kh, kw, stride, pad,
                                  out_h, out_w, x);
    });
}

// Channelwise max over k x k windows. `argmax` records the flat input index
// feeding each output element; ties keep the first position in row-major
// scan order, and backward routes the gradient there.
template <typename T>
Tensor<T> maxpool(const Tensor<T>& x, int k, int stride, std::vector<std::int64_t>& argmax) {
    if (k > x.h || k > x.w)
        throw Error("maxpool: window " + std::to_string(k) + " exceeds input " + x.shape_str());
    if (stride < 1) throw Error("maxpool: stride must be >= 1");
    const int out_h = (x.h - k) / stride + 1;
    const int out_w = (x.w - k) / stride + 1;
    Tensor<T> y(x.n, x.c, out_h, out_w);
    argmax.assign(y.size(), 0);
    parallel_for(x.n, [&](std::int64_t sample) {
        for (int c = 0; c < x.c; ++c) {
            for (int oy = 0; oy < out_h; ++oy) {
                for (int ox = 0; ox < out_w; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t best_idx = 0;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            std::size_t idx = x.index(static_cast<int>(sample), c,
                                                      oy * stride + ky, ox * stride + kx);
                            if (x.data[idx] > best) {
                                best = x.data[idx];
                                best_idx = static_cast<std::int64_t>(idx);
                            }
                        }
                    }
                    std::size_t out_idx = y.index(static_cast<int>(sample), c, oy, ox);
                    y.data[out_idx] = best;
                    argmax[out_idx] = best_idx;
                }
            }
        }
    });
    return y;
}

template <typename T>
void maxpool_backward(Tensor<T>& x, const Tensor<T>& y, const std::vector<std::int64_t>& argmax) {
    x.ensure_grad();
    for (std::size_t i = 0; i < y.grad.size(); ++i)
        x.grad[static_cast<std::size_t>(argmax[i])] += y.grad[i];
}

// max(0, x). Backward masks where the input was <= 0 (gradient 0 at exactly 0).
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y = x;
    y.grad.clear();
    for (T& v : y.data) v = std::max(T(0), v);
    return y;
}

template <typename T>
void relu_backward(Tensor<T>& x, const Tensor<T>& y) {
    x.ensure_grad();
    for (std::size_t i = 0; i < x.data.size(); ++i)
        if (x.data[i] > T(0)) x.grad[i] += y.grad[i];
}

// Concatenates along the channel dimension.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw Error("concat_channels: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor<T> y(a.n, a.c + b.c, a.h, a.w);
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    for (int s = 0; s < a.n; ++s) {
        std::copy_n(&a.data[a.index(s, 0, 0, 0)], plane * a.c, &y.data[y.index(s, 0, 0, 0)]);
        std::copy_n(&b.data[b.index(s, 0, 0, 0)], plane * b.c, &y.data[y.index(s, a.c, 0, 0)]);
    }
    return y;
}

template <typename T>
void concat_channels_backward(Tensor<T>& a, Tensor<T>& b, const Tensor<T>& y) {
    a.ensure_grad();
    b.ensure_grad();
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    for (int s = 0; s < a.n; ++s) {
        const T* gy = &y.grad[y.index(s, 0, 0, 0)];
        T* ga = &a.grad[a.index(s, 0, 0, 0)];
        for (std::size_t i = 0; i < plane * a.c; ++i) ga[i] += gy[i];
        gy = &y.grad[y.index(s, a.c, 0, 0)];
        T* gb = &b.grad[b.index(s, 0, 0, 0)];
        for (std::size_t i = 0; i < plane * b.c; ++i) gb[i] += gy[i];
    }
}

// Spatial mean per channel: N x C x H x W -> N x C x 1 x 1.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    Tensor<T> y(x.n, x.c, 1, 1);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int s = 0; s < x.n; ++s) {
        for (int c = 0; c < x.c; ++c) {
            const T* src = &x.data[x.index(s, c, 0, 0)];
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += src[i];
            y.at(s, c, 0, 0) = acc / static_cast<T>(plane);
        }
    }
    return y;
}

template <typename T>
void global_avg_pool_backward(Tensor<T>& x, const Tensor<T>& y) {
    x.ensure_grad();
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int s = 0; s < x.n; ++s) {
        for (int c = 0; c < x.c; ++c) {
            const T g = y.grad[y.index(s, c, 0, 0)] / static_cast<T>(plane);
            T* dst = &x.grad[x.index(s, c, 0, 0)];
            for (std::size_t i = 0; i < plane; ++i) dst[i] += g;
        }
    }
}

// x (N x F, flattened from whatever shape) times weights (O x F) plus bias.
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const LayerParams<T>& p) {
    const int out_f = p.weights.n, in_f = p.weights.c;
    if (x.features() != in_f)
        throw Error("fully_connected: input has " + std::to_string(x.features()) +
                    " features, weights expect " + std::to_string(in_f));
    Tensor<T> y = Tensor<T>::flat(x.n, out_f);
    for (int s = 0; s < x.n; ++s) {
        const T* xv = &x.data[static_cast<std::size_t>(s) * in_f];
        for (int o = 0; o < out_f; ++o) {
            const T* w = &p.weights.data[static_cast<std::size_t>(o) * in_f];
            T acc = p.bias.data[o];
            for (int f = 0; f < in_f; ++f) acc += xv[f] * w[f];
            y.data[static_cast<std::size_t>(s) * out_f + o] = acc;
        }
    }
    return y;
}

template <typename T>
void fully_connected_backward(Tensor<T>& x, LayerParams<T>& p, const Tensor<T>& y) {
    const int out_f = p.weights.n, in_f = p.weights.c;
    x.ensure_grad();
    p.weights.ensure_grad();
    p.bias.ensure_grad();
    for (int s = 0; s < x.n; ++s) {
        const T* xv = &x.data[static_cast<std::size_t>(s) * in_f];
        const T* gy = &y.grad[static_cast<std::size_t>(s) * out_f];
        T* gx = &x.grad[static_cast<std::size_t>(s) * in_f];
        for (int o = 0; o < out_f; ++o) {
            const T g = gy[o];
            const T* w = &p.weights.data[static_cast<std::size_t>(o) * in_f];
            T* gw = &p.weights.grad[static_cast<std::size_t>(o) * in_f];
            for (int f = 0; f < in_f; ++f) {
                gw[f] += g * xv[f];
                gx[f] += g * w[f];
            }
            p.bias.grad[o] += g;
        }
    }
}

// Mean over the batch of -log softmax(logits)[label], stabilized by
// max-subtraction. Accumulates (softmax - onehot)/N into logits.grad.
template <typename T>
double softmax_cross_entropy(Tensor<T>& logits, const std::vector<int>& labels) {
    const int classes = logits.features();
    if (static_cast<int>(labels.size()) != logits.n)
        throw Error("softmax_cross_entropy: batch/label count mismatch");
    logits.ensure_grad();
    double loss = 0.0;
    for (int s = 0; s < logits.n; ++s) {
        if (labels[s] < 0 || labels[s] >= classes)
            throw Error("softmax_cross_entropy: label " + std::to_string(labels[s]) +
                        " outside [0," + std::to_string(classes) + ")");
        const T* z = &logits.data[static_cast<std::size_t>(s) * classes];
        T zmax = z[0];
        for (int k = 1; k < classes; ++k) zmax = std::max(zmax, z[k]);
        double denom = 0.0;
        for (int k = 0; k < classes; ++k) denom += std::exp(static_cast<double>(z[k] - zmax));
        double log_denom = std::log(denom);
        loss += log_denom - static_cast<double>(z[labels[s]] - zmax);
        T* g = &logits.grad[static_cast<std::size_t>(s) * classes];
        for (int k = 0; k < classes; ++k) {
            double p = std::exp(static_cast<double>(z[k] - zmax)) / denom;
            double target = (k == labels[s]) ? 1.0 : 0.0;
            g[k] += static_cast<T>((p - target) / logits.n);
        }
    }
    return loss / logits.n;
}

// Mean squared error over all elements; accumulates 2*(pred-target)/count
// into pred.grad.
template <typename T>
double mse_loss(Tensor<T>& pred, const Tensor<T>& target) {
    if (!pred.same_shape(target))
        throw Error("mse_loss: shape mismatch " + pred.shape_str() + " vs " + target.shape_str());
    pred.ensure_grad();
    const double count = static_cast<double>(pred.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
        loss += d * d;
        pred.grad[i] += static_cast<T>(2.0 * d / count);
    }
    return loss / count;
}

struct AdamConfig {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

namespace detail {

template <typename T>
void adam_update(Tensor<T>& param, Tensor<T>& m, Tensor<T>& v, std::int64_t step,
                 const AdamConfig& cfg, double decay) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.data.size(); ++i) {
        double g = static_cast<double>(param.grad[i]) + decay * static_cast<double>(param.data[i]);
        double mi = cfg.beta1 * static_cast<double>(m.data[i]) + (1.0 - cfg.beta1) * g;
        double vi = cfg.beta2 * static_cast<double>(v.data[i]) + (1.0 - cfg.beta2) * g * g;
        m.data[i] = static_cast<T>(mi);
        v.data[i] = static_cast<T>(vi);
        double mhat = mi / bc1;
        double vhat = vi / bc2;
        param.data[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

}  // namespace detail

// One Adam step with bias correction. The L2 term adds weight_decay * w to
// the weight gradient before the moment updates; biases are not decayed
// (the usual framework convention for an L2Regularization knob).
template <typename T>
void adam_step(LayerParams<T>& p, const AdamConfig& cfg) {
    if (cfg.lr <= 0.0) throw Error("adam_step: lr must be positive");
    if (cfg.eps <= 0.0) throw Error("adam_step: eps must be positive");
    if (p.weights.grad.size() != p.weights.data.size() ||
        p.bias.grad.size() != p.bias.data.size())
        throw Error("adam_step: gradients not populated");
    ++p.step_count;
    detail::adam_update(p.weights, p.adam_m_w, p.adam_v_w, p.step_count, cfg, cfg.weight_decay);
    detail::adam_update(p.bias, p.adam_m_b, p.adam_v_b, p.step_count, cfg, 0.0);
}

}  // namespace diffsigma

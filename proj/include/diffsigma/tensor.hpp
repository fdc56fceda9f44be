#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "diffsigma/prng.hpp"

namespace diffsigma {

// Dense N x C x H x W array, row-major. Flat (N, F) tensors are carried as
// (N, F, 1, 1). `grad` is empty until a backward pass touches the tensor.
template <typename T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;
    std::vector<T> grad;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    static Tensor flat(int n_, int features, T fill = T(0)) {
        return Tensor(n_, features, 1, 1, fill);
    }

    std::size_t size() const { return data.size(); }
    int features() const { return c * h * w; }
    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::string shape_str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" +
               std::to_string(h) + "x" + std::to_string(w);
    }

    std::size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
    }
    T& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
    T at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    void check_finite(const char* what) const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v)))
                throw Error(std::string("Tensor: non-finite value in ") + what);
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace diffsigma

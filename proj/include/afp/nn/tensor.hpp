// Minimal 4D tensor (channels, depth, height, width) used by the network
// layers. Templated on scalar type: float for training, double for the
// finite-difference gradient checks.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "afp/error.hpp"
#include "afp/volume.hpp"

namespace afp::nn {

template <typename T>
struct Tensor {
    std::int64_t c = 0, d = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(std::int64_t c_, std::int64_t d_, std::int64_t h_, std::int64_t w_, T fill = T(0))
        : c(c_), d(d_), h(h_), w(w_),
          v(static_cast<std::size_t>(c_ * d_ * h_ * w_), fill) {}

    std::int64_t spatial() const { return d * h * w; }
    std::int64_t numel() const { return c * d * h * w; }

    T& at(std::int64_t ci, std::int64_t z, std::int64_t y, std::int64_t x) {
        return v[static_cast<std::size_t>(((ci * d + z) * h + y) * w + x)];
    }
    T at(std::int64_t ci, std::int64_t z, std::int64_t y, std::int64_t x) const {
        return v[static_cast<std::size_t>(((ci * d + z) * h + y) * w + x)];
    }

    bool same_shape(const Tensor& o) const {
        return c == o.c && d == o.d && h == o.h && w == o.w;
    }
};

template <typename T>
Tensor<T> tensor_from_volume(const Volume& vol) {
    Tensor<T> t(1, vol.shape[0], vol.shape[1], vol.shape[2]);
    for (std::size_t i = 0; i < vol.data.size(); ++i) t.v[i] = static_cast<T>(vol.data[i]);
    return t;
}

template <typename T>
Tensor<T> tensor_from_patch(const std::vector<float>& patch, const Shape3& size) {
    Tensor<T> t(1, size[0], size[1], size[2]);
    if (patch.size() != t.v.size())
        throw Error(ErrorCode::SHAPE_MISMATCH, "patch size does not match tensor shape");
    for (std::size_t i = 0; i < patch.size(); ++i) t.v[i] = static_cast<T>(patch[i]);
    return t;
}

template <typename T>
std::vector<float> patch_from_tensor(const Tensor<T>& t) {
    std::vector<float> out(t.v.size());
    for (std::size_t i = 0; i < t.v.size(); ++i) out[i] = static_cast<float>(t.v[i]);
    return out;
}

} // namespace afp::nn

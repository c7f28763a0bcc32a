// Network building blocks with explicit forward/backward passes. Convs run
// as im2col + Eigen GEMM; transposed convs reuse the same machinery as the
// adjoint of a strided conv.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "afp/error.hpp"
#include "afp/rng.hpp"
#include "afp/nn/tensor.hpp"

namespace afp::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// One optimizable parameter blob with its gradient and Adam state.
template <typename T>
struct Param {
    std::vector<T> value;
    std::vector<T> grad;
    std::vector<T> m, vv; // Adam moments, lazily sized

    void init(std::size_t n, T fill = T(0)) {
        value.assign(n, fill);
        grad.assign(n, T(0));
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

namespace detail {

// Output extent of a conv along one axis.
inline std::int64_t conv_out(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
    return (in + 2 * p - k) / s + 1;
}

// cols is (Cin*k^3) x Nout, column per output voxel.
template <typename T>
void im2col(const Tensor<T>& in, std::int64_t k, std::int64_t s, std::int64_t p, Mat<T>& cols) {
    const std::int64_t od = conv_out(in.d, k, s, p);
    const std::int64_t oh = conv_out(in.h, k, s, p);
    const std::int64_t ow = conv_out(in.w, k, s, p);
    cols.setZero(in.c * k * k * k, od * oh * ow);
    for (std::int64_t ci = 0; ci < in.c; ++ci)
        for (std::int64_t kz = 0; kz < k; ++kz)
            for (std::int64_t ky = 0; ky < k; ++ky)
                for (std::int64_t kx = 0; kx < k; ++kx) {
                    const std::int64_t row = ((ci * k + kz) * k + ky) * k + kx;
                    for (std::int64_t oz = 0; oz < od; ++oz) {
                        const std::int64_t iz = oz * s + kz - p;
                        if (iz < 0 || iz >= in.d) continue;
                        for (std::int64_t oy = 0; oy < oh; ++oy) {
                            const std::int64_t iy = oy * s + ky - p;
                            if (iy < 0 || iy >= in.h) continue;
                            for (std::int64_t ox = 0; ox < ow; ++ox) {
                                const std::int64_t ix = ox * s + kx - p;
                                if (ix < 0 || ix >= in.w) continue;
                                cols(row, (oz * oh + oy) * ow + ox) = in.at(ci, iz, iy, ix);
                            }
                        }
                    }
                }
}

// Adjoint of im2col: scatter-add columns back into a tensor.
template <typename T>
void col2im(const Mat<T>& cols, std::int64_t k, std::int64_t s, std::int64_t p, Tensor<T>& out) {
    const std::int64_t od = conv_out(out.d, k, s, p);
    const std::int64_t oh = conv_out(out.h, k, s, p);
    const std::int64_t ow = conv_out(out.w, k, s, p);
    std::fill(out.v.begin(), out.v.end(), T(0));
    for (std::int64_t ci = 0; ci < out.c; ++ci)
        for (std::int64_t kz = 0; kz < k; ++kz)
            for (std::int64_t ky = 0; ky < k; ++ky)
                for (std::int64_t kx = 0; kx < k; ++kx) {
                    const std::int64_t row = ((ci * k + kz) * k + ky) * k + kx;
                    for (std::int64_t oz = 0; oz < od; ++oz) {
                        const std::int64_t iz = oz * s + kz - p;
                        if (iz < 0 || iz >= out.d) continue;
                        for (std::int64_t oy = 0; oy < oh; ++oy) {
                            const std::int64_t iy = oy * s + ky - p;
                            if (iy < 0 || iy >= out.h) continue;
                            for (std::int64_t ox = 0; ox < ow; ++ox) {
                                const std::int64_t ix = ox * s + kx - p;
                                if (ix < 0 || ix >= out.w) continue;
                                out.at(ci, iz, iy, ix) += cols(row, (oz * oh + oy) * ow + ox);
                            }
                        }
                    }
                }
}

} // namespace detail

// 3D convolution, weight shape (Cout, Cin*k^3) row-per-output-channel.
template <typename T>
struct Conv3d {
    std::int64_t cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
    Param<T> weight, bias;
    Mat<T> cached_cols;       // from forward, reused for grad_w
    std::int64_t in_d = 0, in_h = 0, in_w = 0;

    void init(std::int64_t cin_, std::int64_t cout_, std::int64_t k_, std::int64_t stride_,
              std::int64_t pad_, Rng& rng) {
        cin = cin_; cout = cout_; k = k_; stride = stride_; pad = pad_;
        weight.init(static_cast<std::size_t>(cout * cin * k * k * k));
        bias.init(static_cast<std::size_t>(cout));
        // He-normal fan-in init
        double sd = std::sqrt(2.0 / static_cast<double>(cin * k * k * k));
        for (auto& x : weight.value) x = static_cast<T>(rng.normal(0.0, sd));
    }

    Tensor<T> forward(const Tensor<T>& in, bool keep_cache = true) {
        if (in.c != cin) throw Error(ErrorCode::SHAPE_INCOMPATIBLE, "conv input channels");
        in_d = in.d; in_h = in.h; in_w = in.w;
        Mat<T> cols;
        detail::im2col(in, k, stride, pad, cols);
        Tensor<T> out(cout, detail::conv_out(in.d, k, stride, pad),
                      detail::conv_out(in.h, k, stride, pad),
                      detail::conv_out(in.w, k, stride, pad));
        Eigen::Map<const Mat<T>> W(weight.value.data(), cols.rows(), cout);
        Eigen::Map<Mat<T>> O(out.v.data(), out.spatial(), cout);
        O.noalias() = cols.transpose() * W;
        for (std::int64_t co = 0; co < cout; ++co)
            O.col(co).array() += bias.value[static_cast<std::size_t>(co)];
        if (keep_cache) cached_cols = std::move(cols);
        return out;
    }

    // Returns grad wrt input; accumulates param grads unless frozen.
    Tensor<T> backward(const Tensor<T>& gout, bool frozen) {
        Eigen::Map<const Mat<T>> G(gout.v.data(), gout.spatial(), gout.c);
        if (!frozen) {
            Eigen::Map<Mat<T>> gW(weight.grad.data(), cached_cols.rows(), cout);
            gW.noalias() += cached_cols * G;
            for (std::int64_t co = 0; co < cout; ++co)
                bias.grad[static_cast<std::size_t>(co)] += G.col(co).sum();
        }
        Eigen::Map<const Mat<T>> W(weight.value.data(), cin * k * k * k, cout);
        Mat<T> gcols = W * G.transpose();
        Tensor<T> gin(cin, in_d, in_h, in_w);
        detail::col2im(gcols, k, stride, pad, gin);
        return gin;
    }
};

// Transposed 3D convolution, kernel 2, stride 2 (exact x2 upsampling).
// Implemented as the adjoint of a k=2,s=2 conv: forward scatters via
// col2im, backward gathers via im2col.
template <typename T>
struct ConvTranspose3d {
    std::int64_t cin = 0, cout = 0;
    static constexpr std::int64_t k = 2, stride = 2;
    Param<T> weight, bias; // weight (Cout*k^3, Cin)
    Tensor<T> cached_in;

    void init(std::int64_t cin_, std::int64_t cout_, Rng& rng) {
        cin = cin_; cout = cout_;
        weight.init(static_cast<std::size_t>(cin * cout * k * k * k));
        bias.init(static_cast<std::size_t>(cout));
        double sd = std::sqrt(2.0 / static_cast<double>(cin * k * k * k));
        for (auto& x : weight.value) x = static_cast<T>(rng.normal(0.0, sd));
    }

    Tensor<T> forward(const Tensor<T>& in, bool keep_cache = true) {
        if (in.c != cin) throw Error(ErrorCode::SHAPE_INCOMPATIBLE, "tconv input channels");
        Tensor<T> out(cout, in.d * 2, in.h * 2, in.w * 2);
        Eigen::Map<const Mat<T>> W(weight.value.data(), cout * k * k * k, cin);
        Eigen::Map<const Mat<T>> X(in.v.data(), in.spatial(), cin);
        Mat<T> cols = W * X.transpose(); // (Cout*k^3) x Nin
        detail::col2im(cols, k, stride, 0, out);
        for (std::int64_t co = 0; co < cout; ++co) {
            T b = bias.value[static_cast<std::size_t>(co)];
            T* p = out.v.data() + co * out.spatial();
            for (std::int64_t i = 0; i < out.spatial(); ++i) p[i] += b;
        }
        if (keep_cache) cached_in = in;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout, bool frozen) {
        Mat<T> gcols;
        detail::im2col(gout, k, stride, 0, gcols); // (Cout*k^3) x Nin
        if (!frozen) {
            Eigen::Map<const Mat<T>> X(cached_in.v.data(), cached_in.spatial(), cin);
            Eigen::Map<Mat<T>> gW(weight.grad.data(), cout * k * k * k, cin);
            gW.noalias() += gcols * X;
            for (std::int64_t co = 0; co < cout; ++co) {
                T acc = T(0);
                const T* p = gout.v.data() + co * gout.spatial();
                for (std::int64_t i = 0; i < gout.spatial(); ++i) acc += p[i];
                bias.grad[static_cast<std::size_t>(co)] += acc;
            }
        }
        Eigen::Map<const Mat<T>> W(weight.value.data(), cout * k * k * k, cin);
        Tensor<T> gin(cin, cached_in.d, cached_in.h, cached_in.w);
        Eigen::Map<Mat<T>> GI(gin.v.data(), gin.spatial(), cin);
        GI.noalias() = gcols.transpose() * W;
        return gin;
    }
};

// Per-channel instance normalization with affine parameters.
template <typename T>
struct InstanceNorm {
    std::int64_t channels = 0;
    static constexpr double eps = 1e-5;
    Param<T> gamma, beta;
    Tensor<T> cached_xhat;
    std::vector<T> cached_istd;

    void init(std::int64_t c) {
        channels = c;
        gamma.init(static_cast<std::size_t>(c), T(1));
        beta.init(static_cast<std::size_t>(c), T(0));
    }

    Tensor<T> forward(const Tensor<T>& in, bool keep_cache = true) {
        Tensor<T> out(in.c, in.d, in.h, in.w);
        Tensor<T> xhat(in.c, in.d, in.h, in.w);
        std::vector<T> istds(static_cast<std::size_t>(in.c));
        const std::int64_t n = in.spatial();
        for (std::int64_t ci = 0; ci < in.c; ++ci) {
            const T* x = in.v.data() + ci * n;
            double mean = 0;
            for (std::int64_t i = 0; i < n; ++i) mean += static_cast<double>(x[i]);
            mean /= static_cast<double>(n);
            double var = 0;
            for (std::int64_t i = 0; i < n; ++i) {
                double dxi = static_cast<double>(x[i]) - mean;
                var += dxi * dxi;
            }
            var /= static_cast<double>(n);
            T istd = static_cast<T>(1.0 / std::sqrt(var + eps));
            istds[static_cast<std::size_t>(ci)] = istd;
            T g = gamma.value[static_cast<std::size_t>(ci)];
            T b = beta.value[static_cast<std::size_t>(ci)];
            T* xh = xhat.v.data() + ci * n;
            T* o = out.v.data() + ci * n;
            for (std::int64_t i = 0; i < n; ++i) {
                xh[i] = (x[i] - static_cast<T>(mean)) * istd;
                o[i] = g * xh[i] + b;
            }
        }
        if (keep_cache) {
            cached_xhat = std::move(xhat);
            cached_istd = std::move(istds);
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout, bool frozen) {
        Tensor<T> gin(gout.c, gout.d, gout.h, gout.w);
        const std::int64_t n = gout.spatial();
        for (std::int64_t ci = 0; ci < gout.c; ++ci) {
            const T* gy = gout.v.data() + ci * n;
            const T* xh = cached_xhat.v.data() + ci * n;
            T g = gamma.value[static_cast<std::size_t>(ci)];
            T istd = cached_istd[static_cast<std::size_t>(ci)];
            double sum_gy = 0, sum_gy_xh = 0;
            for (std::int64_t i = 0; i < n; ++i) {
                sum_gy += static_cast<double>(gy[i]);
                sum_gy_xh += static_cast<double>(gy[i]) * static_cast<double>(xh[i]);
            }
            if (!frozen) {
                gamma.grad[static_cast<std::size_t>(ci)] += static_cast<T>(sum_gy_xh);
                beta.grad[static_cast<std::size_t>(ci)] += static_cast<T>(sum_gy);
            }
            T* gx = gin.v.data() + ci * n;
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::int64_t i = 0; i < n; ++i)
                gx[i] = static_cast<T>(static_cast<double>(g) * static_cast<double>(istd) *
                                       (static_cast<double>(gy[i]) - inv_n * sum_gy -
                                        static_cast<double>(xh[i]) * inv_n * sum_gy_xh));
        }
        return gin;
    }
};

template <typename T>
struct ReLU {
    std::vector<bool> mask;

    Tensor<T> forward(const Tensor<T>& in, bool keep_cache = true) {
        Tensor<T> out = in;
        if (keep_cache) mask.assign(in.v.size(), false);
        for (std::size_t i = 0; i < out.v.size(); ++i) {
            if (out.v[i] > T(0)) {
                if (keep_cache) mask[i] = true;
            } else {
                out.v[i] = T(0);
            }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin = gout;
        for (std::size_t i = 0; i < gin.v.size(); ++i)
            if (!mask[i]) gin.v[i] = T(0);
        return gin;
    }
};

template <typename T>
struct LeakyReLU {
    T slope = T(0.2);
    std::vector<bool> mask;

    Tensor<T> forward(const Tensor<T>& in, bool keep_cache = true) {
        Tensor<T> out = in;
        if (keep_cache) mask.assign(in.v.size(), false);
        for (std::size_t i = 0; i < out.v.size(); ++i) {
            if (out.v[i] > T(0)) {
                if (keep_cache) mask[i] = true;
            } else {
                out.v[i] *= slope;
            }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin = gout;
        for (std::size_t i = 0; i < gin.v.size(); ++i)
            if (!mask[i]) gin.v[i] *= slope;
        return gin;
    }
};

// Nearest-neighbor x2 upsampling (parameter-free).
template <typename T>
struct UpsampleNearest2 {
    Tensor<T> forward(const Tensor<T>& in) {
        Tensor<T> out(in.c, in.d * 2, in.h * 2, in.w * 2);
        for (std::int64_t ci = 0; ci < in.c; ++ci)
            for (std::int64_t z = 0; z < out.d; ++z)
                for (std::int64_t y = 0; y < out.h; ++y)
                    for (std::int64_t x = 0; x < out.w; ++x)
                        out.at(ci, z, y, x) = in.at(ci, z / 2, y / 2, x / 2);
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin(gout.c, gout.d / 2, gout.h / 2, gout.w / 2);
        for (std::int64_t ci = 0; ci < gout.c; ++ci)
            for (std::int64_t z = 0; z < gout.d; ++z)
                for (std::int64_t y = 0; y < gout.h; ++y)
                    for (std::int64_t x = 0; x < gout.w; ++x)
                        gin.at(ci, z / 2, y / 2, x / 2) += gout.at(ci, z, y, x);
        return gin;
    }
};

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.d != b.d || a.h != b.h || a.w != b.w)
        throw Error(ErrorCode::SHAPE_MISMATCH, "concat spatial mismatch");
    Tensor<T> out(a.c + b.c, a.d, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
    return out;
}

template <typename T>
void split_channels(const Tensor<T>& g, Tensor<T>& ga, Tensor<T>& gb) {
    std::copy(g.v.begin(), g.v.begin() + static_cast<std::ptrdiff_t>(ga.v.size()), ga.v.begin());
    std::copy(g.v.begin() + static_cast<std::ptrdiff_t>(ga.v.size()), g.v.end(), gb.v.begin());
}

} // namespace afp::nn

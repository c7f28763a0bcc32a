// Normalization / resampling pipeline: z-score MR, percentile-clipped
// foreground-standardized CT, spacing resampling with trilinear or cubic
// B-spline interpolation (nearest for labels).
#pragma once

#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include "afp/error.hpp"
#include "afp/volume.hpp"

namespace afp {

enum class Interpolation { LINEAR, BSPLINE3 };

struct PreprocessConfig {
    Vec3 target_spacing{0.6, 0.6, 0.6};
    Interpolation mr_interpolation = Interpolation::LINEAR;
    double ct_clip_low = 0.5;    // percentile
    double ct_clip_high = 99.5;  // percentile
    double foreground_threshold_pct = 10.0; // volume percentile used when no mask given

    void validate() const {
        if (!(ct_clip_low < ct_clip_high))
            throw Error(ErrorCode::CONFIG_INVALID, "ct clip percentiles: low must be < high");
        for (double s : target_spacing)
            if (!(s > 0.0))
                throw Error(ErrorCode::CONFIG_INVALID, "target_spacing must be positive");
    }
};

// Affine stats needed to invert a normalization. For CT the clip bounds are
// recorded too (clipping itself is not invertible).
struct NormStats {
    double p_low = 0.0;
    double p_high = 0.0;
    double mean = 0.0;
    double std = 1.0;
};

// Percentile with the linear-interpolation convention: rank = q/100*(n-1),
// interpolated between the surrounding order statistics.
inline double percentile(std::vector<float> values, double q) {
    if (values.empty()) throw Error(ErrorCode::EMPTY_FOREGROUND, "percentile of empty set");
    std::sort(values.begin(), values.end());
    double rank = q / 100.0 * static_cast<double>(values.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(rank));
    auto hi = static_cast<std::size_t>(std::ceil(rank));
    double frac = rank - static_cast<double>(lo);
    return (1.0 - frac) * values[lo] + frac * values[hi];
}

namespace detail {

inline float sample_trilinear(const Volume& v, double z, double y, double x) {
    auto clampi = [](std::int64_t i, std::int64_t n) { return std::clamp<std::int64_t>(i, 0, n - 1); };
    std::int64_t z0 = static_cast<std::int64_t>(std::floor(z));
    std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
    std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
    double fz = z - static_cast<double>(z0), fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                double w = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
                if (w == 0.0) continue;
                acc += w * v.at(clampi(z0 + dz, v.shape[0]), clampi(y0 + dy, v.shape[1]),
                                clampi(x0 + dx, v.shape[2]));
            }
    return static_cast<float>(acc);
}

// Cubic B-spline kernel.
inline double bspline3_w(double t) {
    t = std::abs(t);
    if (t < 1.0) return (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0;
    if (t < 2.0) { double u = 2.0 - t; return u * u * u / 6.0; }
    return 0.0;
}

// In-place interpolating-spline prefilter along each axis (pole sqrt(3)-2).
inline void bspline3_prefilter(std::vector<double>& c) {
    const double z = std::sqrt(3.0) - 2.0;
    const std::size_t n = c.size();
    if (n < 2) return;
    const double lambda = (1.0 - z) * (1.0 - 1.0 / z);
    for (auto& v : c) v *= lambda;
    // causal init (mirror boundary, truncated sum)
    double sum = c[0];
    double zn = z;
    std::size_t horizon = std::min<std::size_t>(n, 32);
    for (std::size_t i = 1; i < horizon; ++i) { sum += zn * c[i]; zn *= z; }
    c[0] = sum;
    for (std::size_t i = 1; i < n; ++i) c[i] += z * c[i - 1];
    // anticausal
    c[n - 1] = (z / (z * z - 1.0)) * (z * c[n - 2] + c[n - 1]);
    for (std::size_t i = n - 1; i-- > 0;) c[i] = z * (c[i + 1] - c[i]);
}

} // namespace detail

// Resamples to target_spacing. New shape = ceil(old_shape * old_spacing /
// target_spacing); output index i samples input coordinate i * ratio, with
// the origin preserved (index 0 maps to index 0).
inline Volume resample_volume(const Volume& v, const Vec3& target_spacing,
                              Interpolation interp) {
    v.validate();
    Shape3 out_shape;
    Vec3 ratio;
    for (int a = 0; a < 3; ++a) {
        if (!(target_spacing[a] > 0.0))
            throw Error(ErrorCode::CONFIG_INVALID, "target spacing must be positive");
        out_shape[a] = static_cast<std::int64_t>(
            std::ceil(static_cast<double>(v.shape[a]) * v.spacing[a] / target_spacing[a]));
        if (out_shape[a] < 1) throw Error(ErrorCode::DEGENERATE_OUTPUT, "output dim 0");
        ratio[a] = target_spacing[a] / v.spacing[a];
    }
    if (out_shape == v.shape && target_spacing == v.spacing) {
        Volume out = v;
        return out;
    }
    Volume out(out_shape, 0.f, target_spacing, v.origin, v.modality);

    if (interp == Interpolation::LINEAR) {
        for (std::int64_t z = 0; z < out_shape[0]; ++z)
            for (std::int64_t y = 0; y < out_shape[1]; ++y)
                for (std::int64_t x = 0; x < out_shape[2]; ++x)
                    out.at(z, y, x) = detail::sample_trilinear(
                        v, static_cast<double>(z) * ratio[0], static_cast<double>(y) * ratio[1],
                        static_cast<double>(x) * ratio[2]);
    } else {
        // Prefilter to spline coefficients, separably per axis.
        std::vector<double> coef(v.data.begin(), v.data.end());
        auto idx = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
            return static_cast<std::size_t>((z * v.shape[1] + y) * v.shape[2] + x);
        };
        std::vector<double> line;
        for (std::int64_t z = 0; z < v.shape[0]; ++z)
            for (std::int64_t y = 0; y < v.shape[1]; ++y) {
                line.assign(v.shape[2], 0.0);
                for (std::int64_t x = 0; x < v.shape[2]; ++x) line[static_cast<std::size_t>(x)] = coef[idx(z, y, x)];
                detail::bspline3_prefilter(line);
                for (std::int64_t x = 0; x < v.shape[2]; ++x) coef[idx(z, y, x)] = line[static_cast<std::size_t>(x)];
            }
        for (std::int64_t z = 0; z < v.shape[0]; ++z)
            for (std::int64_t x = 0; x < v.shape[2]; ++x) {
                line.assign(v.shape[1], 0.0);
                for (std::int64_t y = 0; y < v.shape[1]; ++y) line[static_cast<std::size_t>(y)] = coef[idx(z, y, x)];
                detail::bspline3_prefilter(line);
                for (std::int64_t y = 0; y < v.shape[1]; ++y) coef[idx(z, y, x)] = line[static_cast<std::size_t>(y)];
            }
        for (std::int64_t y = 0; y < v.shape[1]; ++y)
            for (std::int64_t x = 0; x < v.shape[2]; ++x) {
                line.assign(v.shape[0], 0.0);
                for (std::int64_t z = 0; z < v.shape[0]; ++z) line[static_cast<std::size_t>(z)] = coef[idx(z, y, x)];
                detail::bspline3_prefilter(line);
                for (std::int64_t z = 0; z < v.shape[0]; ++z) coef[idx(z, y, x)] = line[static_cast<std::size_t>(z)];
            }
        auto coef_at = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
            z = std::clamp<std::int64_t>(z, 0, v.shape[0] - 1);
            y = std::clamp<std::int64_t>(y, 0, v.shape[1] - 1);
            x = std::clamp<std::int64_t>(x, 0, v.shape[2] - 1);
            return coef[idx(z, y, x)];
        };
        for (std::int64_t z = 0; z < out_shape[0]; ++z)
            for (std::int64_t y = 0; y < out_shape[1]; ++y)
                for (std::int64_t x = 0; x < out_shape[2]; ++x) {
                    double pz = static_cast<double>(z) * ratio[0];
                    double py = static_cast<double>(y) * ratio[1];
                    double px = static_cast<double>(x) * ratio[2];
                    std::int64_t bz = static_cast<std::int64_t>(std::floor(pz)) - 1;
                    std::int64_t by = static_cast<std::int64_t>(std::floor(py)) - 1;
                    std::int64_t bx = static_cast<std::int64_t>(std::floor(px)) - 1;
                    double acc = 0.0;
                    for (int dz = 0; dz < 4; ++dz) {
                        double wz = detail::bspline3_w(pz - static_cast<double>(bz + dz));
                        if (wz == 0.0) continue;
                        for (int dy = 0; dy < 4; ++dy) {
                            double wy = detail::bspline3_w(py - static_cast<double>(by + dy));
                            if (wy == 0.0) continue;
                            for (int dx = 0; dx < 4; ++dx) {
                                double wx = detail::bspline3_w(px - static_cast<double>(bx + dx));
                                if (wx == 0.0) continue;
                                acc += wz * wy * wx * coef_at(bz + dz, by + dy, bx + dx);
                            }
                        }
                    }
                    out.at(z, y, x) = static_cast<float>(acc);
                }
    }
    return out;
}

// Labels resample nearest-neighbor regardless of the requested interpolation.
inline LabelVolume resample_labels(const LabelVolume& lv, const Vec3& target_spacing) {
    Shape3 out_shape;
    Vec3 ratio;
    for (int a = 0; a < 3; ++a) {
        out_shape[a] = static_cast<std::int64_t>(
            std::ceil(static_cast<double>(lv.shape[a]) * lv.spacing[a] / target_spacing[a]));
        if (out_shape[a] < 1) throw Error(ErrorCode::DEGENERATE_OUTPUT, "output dim 0");
        ratio[a] = target_spacing[a] / lv.spacing[a];
    }
    LabelVolume out(out_shape, 0, target_spacing, lv.origin);
    out.label_names = lv.label_names;
    for (std::int64_t z = 0; z < out_shape[0]; ++z)
        for (std::int64_t y = 0; y < out_shape[1]; ++y)
            for (std::int64_t x = 0; x < out_shape[2]; ++x) {
                auto nz = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::llround(static_cast<double>(z) * ratio[0])), 0, lv.shape[0] - 1);
                auto ny = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::llround(static_cast<double>(y) * ratio[1])), 0, lv.shape[1] - 1);
                auto nx = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::llround(static_cast<double>(x) * ratio[2])), 0, lv.shape[2] - 1);
                out.at(z, y, x) = lv.at(nz, ny, nx);
            }
    return out;
}

inline std::pair<Volume, NormStats> zscore_normalize_mr(const Volume& v) {
    v.validate();
    double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (float x : v.data) mean += x;
    mean /= n;
    double var = 0.0;
    for (float x : v.data) var += (x - mean) * (x - mean);
    var /= n;
    double sd = std::sqrt(var);
    if (sd == 0.0) throw Error(ErrorCode::CONSTANT_VOLUME, "std = 0");
    Volume out = v;
    for (float& x : out.data) x = static_cast<float>((x - mean) / sd);
    NormStats stats{0.0, 0.0, mean, sd};
    return {out, stats};
}

// Clips to foreground [p_low, p_high] percentiles, then standardizes by the
// foreground mean/std (applied to the whole volume).
inline std::pair<Volume, NormStats> normalize_ct(const Volume& v,
                                                 const std::vector<bool>& foreground,
                                                 double p_low_pct = 0.5,
                                                 double p_high_pct = 99.5) {
    v.validate();
    if (foreground.size() != v.data.size())
        throw Error(ErrorCode::SHAPE_MISMATCH, "foreground mask size mismatch");
    std::vector<float> fg;
    for (std::size_t i = 0; i < v.data.size(); ++i)
        if (foreground[i]) fg.push_back(v.data[i]);
    if (fg.empty()) throw Error(ErrorCode::EMPTY_FOREGROUND, "no foreground voxels");
    double p_low = percentile(fg, p_low_pct);
    double p_high = percentile(fg, p_high_pct);
    double mean = 0.0;
    for (float x : fg) mean += x;
    mean /= static_cast<double>(fg.size());
    double var = 0.0;
    for (float x : fg) var += (x - mean) * (x - mean);
    var /= static_cast<double>(fg.size());
    double sd = std::sqrt(var);
    if (sd == 0.0) throw Error(ErrorCode::CONSTANT_FOREGROUND, "foreground std = 0");
    Volume out = v;
    for (float& x : out.data) {
        double c = std::clamp<double>(x, p_low, p_high);
        x = static_cast<float>((c - mean) / sd);
    }
    return {out, NormStats{p_low, p_high, mean, sd}};
}

// Foreground from a label mask, or from the default threshold rule (voxels
// above the given percentile of the whole volume) when none is supplied.
inline std::vector<bool> foreground_from_labels(const LabelVolume& lv) {
    std::vector<bool> fg(lv.labels.size());
    for (std::size_t i = 0; i < lv.labels.size(); ++i) fg[i] = lv.labels[i] != 0;
    return fg;
}

inline std::vector<bool> foreground_from_threshold(const Volume& v, double pct = 10.0) {
    double thr = percentile(v.data, pct);
    std::vector<bool> fg(v.data.size());
    for (std::size_t i = 0; i < v.data.size(); ++i) fg[i] = v.data[i] > thr;
    return fg;
}

inline Volume denormalize(const Volume& v, const NormStats& stats) {
    Volume out = v;
    for (float& x : out.data) x = static_cast<float>(x * stats.std + stats.mean);
    return out;
}

} // namespace afp

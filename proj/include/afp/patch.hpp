// Deterministic overlapping-patch tiling, median/mean blending, and biased
// training-patch sampling.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "afp/error.hpp"
#include "afp/rng.hpp"
#include "afp/volume.hpp"

namespace afp {

struct Window {
    Shape3 start; // inclusive
    Shape3 end;   // exclusive
};

struct PatchGrid {
    Shape3 volume_shape{0, 0, 0};
    Shape3 patch_size{0, 0, 0};
    double tiling = 0.5;
    std::vector<Window> windows; // lexicographic by start
};

// Window starts along one axis: stride = floor(patch * (1 - tiling)), last
// window clamped to the boundary.
inline std::vector<std::int64_t> axis_starts(std::int64_t extent, std::int64_t patch, double tiling) {
    std::int64_t stride = static_cast<std::int64_t>(
        std::floor(static_cast<double>(patch) * (1.0 - tiling)));
    stride = std::max<std::int64_t>(stride, 1);
    std::vector<std::int64_t> starts;
    for (std::int64_t s = 0;; s += stride) {
        if (s + patch >= extent) {
            starts.push_back(extent - patch);
            break;
        }
        starts.push_back(s);
    }
    return starts;
}

inline PatchGrid tile_volume(const Shape3& shape, const Shape3& patch_size, double tiling = 0.5) {
    if (!(tiling > 0.0 && tiling < 1.0))
        throw Error(ErrorCode::CONFIG_INVALID, "tiling must be in (0,1)");
    for (int a = 0; a < 3; ++a)
        if (patch_size[a] > shape[a] || patch_size[a] < 1)
            throw Error(ErrorCode::PATCH_TOO_LARGE,
                        "patch " + std::to_string(patch_size[a]) + " vs shape " +
                            std::to_string(shape[a]) + " on axis " + std::to_string(a));
    PatchGrid g;
    g.volume_shape = shape;
    g.patch_size = patch_size;
    g.tiling = tiling;
    auto sz = axis_starts(shape[0], patch_size[0], tiling);
    auto sy = axis_starts(shape[1], patch_size[1], tiling);
    auto sx = axis_starts(shape[2], patch_size[2], tiling);
    for (auto z : sz)
        for (auto y : sy)
            for (auto x : sx)
                g.windows.push_back({{z, y, x},
                                     {z + patch_size[0], y + patch_size[1], x + patch_size[2]}});
    return g;
}

inline std::vector<float> extract_patch(const Volume& v, const Window& w) {
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>((w.end[0] - w.start[0]) * (w.end[1] - w.start[1]) *
                                         (w.end[2] - w.start[2])));
    for (std::int64_t z = w.start[0]; z < w.end[0]; ++z)
        for (std::int64_t y = w.start[1]; y < w.end[1]; ++y)
            for (std::int64_t x = w.start[2]; x < w.end[2]; ++x)
                out.push_back(v.at(z, y, x));
    return out;
}

namespace detail {

// Gathers, per voxel, all covering window outputs; fn reduces each bucket.
template <typename Reduce>
std::vector<float> blend(const PatchGrid& g, const std::vector<std::vector<float>>& outputs,
                         Reduce fn) {
    if (outputs.size() != g.windows.size())
        throw Error(ErrorCode::COUNT_MISMATCH,
                    std::to_string(outputs.size()) + " outputs for " +
                        std::to_string(g.windows.size()) + " windows");
    const auto& ps = g.patch_size;
    const std::size_t patch_len =
        static_cast<std::size_t>(ps[0]) * static_cast<std::size_t>(ps[1]) * static_cast<std::size_t>(ps[2]);
    for (const auto& o : outputs)
        if (o.size() != patch_len)
            throw Error(ErrorCode::COUNT_MISMATCH, "patch output size mismatch");

    const auto& vs = g.volume_shape;
    std::size_t n = static_cast<std::size_t>(num_voxels(vs));
    std::vector<std::uint32_t> count(n, 0);
    for (const auto& w : g.windows)
        for (std::int64_t z = w.start[0]; z < w.end[0]; ++z)
            for (std::int64_t y = w.start[1]; y < w.end[1]; ++y)
                for (std::int64_t x = w.start[2]; x < w.end[2]; ++x)
                    ++count[static_cast<std::size_t>((z * vs[1] + y) * vs[2] + x)];
    std::vector<std::size_t> offset(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) offset[i + 1] = offset[i] + count[i];
    std::vector<float> bucket(offset[n]);
    std::vector<std::size_t> fill(offset.begin(), offset.end() - 1);
    for (std::size_t wi = 0; wi < g.windows.size(); ++wi) {
        const auto& w = g.windows[wi];
        std::size_t pi = 0;
        for (std::int64_t z = w.start[0]; z < w.end[0]; ++z)
            for (std::int64_t y = w.start[1]; y < w.end[1]; ++y)
                for (std::int64_t x = w.start[2]; x < w.end[2]; ++x) {
                    std::size_t vi = static_cast<std::size_t>((z * vs[1] + y) * vs[2] + x);
                    bucket[fill[vi]++] = outputs[wi][pi++];
                }
    }
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = fn(bucket.data() + offset[i], bucket.data() + offset[i + 1]);
    return out;
}

} // namespace detail

// Per-voxel median over covering windows; even count takes the midpoint of
// the central pair.
inline std::vector<float> median_blend(const PatchGrid& g,
                                       const std::vector<std::vector<float>>& outputs) {
    return detail::blend(g, outputs, [](float* lo, float* hi) {
        std::size_t m = static_cast<std::size_t>(hi - lo);
        std::sort(lo, hi);
        if (m % 2 == 1) return lo[m / 2];
        return 0.5f * (lo[m / 2 - 1] + lo[m / 2]);
    });
}

inline std::vector<float> mean_blend(const PatchGrid& g,
                                     const std::vector<std::vector<float>>& outputs) {
    return detail::blend(g, outputs, [](float* lo, float* hi) {
        double acc = 0.0;
        for (float* p = lo; p != hi; ++p) acc += *p;
        return static_cast<float>(acc / static_cast<double>(hi - lo));
    });
}

// Biased patch sampling for training. The first ceil(fg_bias*n) patches are
// required to contain at least one non-background label voxel in the central
// half of the window.
inline std::vector<Window> sample_training_patches(const VolumePair& pair,
                                                   const Shape3& patch_size, std::size_t n,
                                                   std::uint64_t seed, double fg_bias) {
    for (int a = 0; a < 3; ++a)
        if (patch_size[a] > pair.source.shape[a])
            throw Error(ErrorCode::PATCH_TOO_LARGE, "patch exceeds volume on axis " + std::to_string(a));
    if (fg_bias < 0.0 || fg_bias > 1.0)
        throw Error(ErrorCode::CONFIG_INVALID, "fg_bias must be in [0,1]");

    const auto& shape = pair.source.shape;
    auto center_has_fg = [&](const Shape3& start) {
        if (!pair.labels) return false;
        for (std::int64_t z = start[0] + patch_size[0] / 4; z < start[0] + 3 * patch_size[0] / 4; ++z)
            for (std::int64_t y = start[1] + patch_size[1] / 4; y < start[1] + 3 * patch_size[1] / 4; ++y)
                for (std::int64_t x = start[2] + patch_size[2] / 4; x < start[2] + 3 * patch_size[2] / 4; ++x)
                    if (pair.labels->at(z, y, x) != 0) return true;
        return false;
    };

    // Labeled voxel positions, used to force foreground hits deterministically.
    std::vector<std::size_t> fg_voxels;
    if (pair.labels && fg_bias > 0.0)
        for (std::size_t i = 0; i < pair.labels->labels.size(); ++i)
            if (pair.labels->labels[i] != 0) fg_voxels.push_back(i);

    Rng rng(seed, 0xfa7c4);
    std::size_t n_fg = static_cast<std::size_t>(std::ceil(fg_bias * static_cast<double>(n)));
    std::vector<Window> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Shape3 start;
        bool need_fg = i < n_fg && !fg_voxels.empty();
        bool ok = false;
        for (int attempt = 0; attempt < 32 && !ok; ++attempt) {
            for (int a = 0; a < 3; ++a)
                start[a] = static_cast<std::int64_t>(
                    rng.uniform_int(static_cast<std::uint64_t>(shape[a] - patch_size[a] + 1)));
            ok = !need_fg || center_has_fg(start);
        }
        if (need_fg && !ok) {
            // Center the window on a random labeled voxel.
            std::size_t vi = fg_voxels[rng.uniform_int(fg_voxels.size())];
            Shape3 pos{static_cast<std::int64_t>(vi) / (shape[1] * shape[2]),
                       (static_cast<std::int64_t>(vi) / shape[2]) % shape[1],
                       static_cast<std::int64_t>(vi) % shape[2]};
            for (int a = 0; a < 3; ++a)
                start[a] = std::clamp<std::int64_t>(pos[a] - patch_size[a] / 2, 0,
                                                    shape[a] - patch_size[a]);
        }
        out.push_back({start, {start[0] + patch_size[0], start[1] + patch_size[1],
                               start[2] + patch_size[2]}});
    }
    return out;
}

} // namespace afp

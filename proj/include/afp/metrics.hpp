// Intensity metrics (MAE, 3D SSIM) and task metrics (Dice, NSD with a
// spacing-aware exact Euclidean distance transform).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "afp/error.hpp"
#include "afp/volume.hpp"

namespace afp {

struct LabelScores {
    double dice = 0.0;
    double nsd = 0.0;
};

struct MetricsReport {
    std::string case_id;
    double mae = 0.0;
    double ssim = 0.0;
    std::map<std::int32_t, LabelScores> per_label;
    double tolerance_mm = 0.0;
};

inline double mae(const Volume& a, const Volume& b,
                  const LabelVolume* mask = nullptr) {
    if (!check_alignment(a, b, 1e-6)) throw Error(ErrorCode::MISALIGNED, "mae inputs");
    if (mask && !check_alignment(a, *mask, 1e-6)) throw Error(ErrorCode::MISALIGNED, "mae mask");
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (mask && mask->labels[i] == 0) continue;
        acc += std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
        ++n;
    }
    if (n == 0) throw Error(ErrorCode::EMPTY_FOREGROUND, "empty mae mask");
    return acc / static_cast<double>(n);
}

// Mean local SSIM over all fully-interior cubic windows, uniform kernel,
// stabilizers C1=(0.01 R)^2, C2=(0.03 R)^2. Volumes smaller than the window
// use one global window.
inline double ssim3d(const Volume& a, const Volume& b, int window = 7,
                     double dynamic_range = 1.0) {
    if (!check_alignment(a, b, 1e-6)) throw Error(ErrorCode::MISALIGNED, "ssim inputs");
    if (!(dynamic_range > 0)) throw Error(ErrorCode::CONFIG_INVALID, "dynamic_range must be > 0");
    int w = window;
    Shape3 sh = a.shape;
    for (int ax = 0; ax < 3; ++ax) w = static_cast<int>(std::min<std::int64_t>(w, sh[ax]));
    const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
    const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
    const double wn = static_cast<double>(w) * w * w;

    // Summed-volume tables over a, b, a^2, b^2, ab.
    Shape3 ts{sh[0] + 1, sh[1] + 1, sh[2] + 1};
    auto ti = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
        return static_cast<std::size_t>((z * ts[1] + y) * ts[2] + x);
    };
    std::size_t tn = static_cast<std::size_t>(num_voxels(ts));
    std::vector<double> Sa(tn, 0), Sb(tn, 0), Saa(tn, 0), Sbb(tn, 0), Sab(tn, 0);
    for (std::int64_t z = 0; z < sh[0]; ++z)
        for (std::int64_t y = 0; y < sh[1]; ++y)
            for (std::int64_t x = 0; x < sh[2]; ++x) {
                double va = a.at(z, y, x), vb = b.at(z, y, x);
                std::size_t i = ti(z + 1, y + 1, x + 1);
                auto roll = [&](std::vector<double>& S, double v) {
                    S[i] = v + S[ti(z, y + 1, x + 1)] + S[ti(z + 1, y, x + 1)] +
                           S[ti(z + 1, y + 1, x)] - S[ti(z, y, x + 1)] - S[ti(z, y + 1, x)] -
                           S[ti(z + 1, y, x)] + S[ti(z, y, x)];
                };
                roll(Sa, va);
                roll(Sb, vb);
                roll(Saa, va * va);
                roll(Sbb, vb * vb);
                roll(Sab, va * vb);
            }
    auto box = [&](const std::vector<double>& S, std::int64_t z, std::int64_t y, std::int64_t x) {
        return S[ti(z + w, y + w, x + w)] - S[ti(z, y + w, x + w)] - S[ti(z + w, y, x + w)] -
               S[ti(z + w, y + w, x)] + S[ti(z, y, x + w)] + S[ti(z, y + w, x)] +
               S[ti(z + w, y, x)] - S[ti(z, y, x)];
    };

    double acc = 0.0;
    std::int64_t count = 0;
    for (std::int64_t z = 0; z + w <= sh[0]; ++z)
        for (std::int64_t y = 0; y + w <= sh[1]; ++y)
            for (std::int64_t x = 0; x + w <= sh[2]; ++x) {
                double mu_a = box(Sa, z, y, x) / wn;
                double mu_b = box(Sb, z, y, x) / wn;
                double var_a = box(Saa, z, y, x) / wn - mu_a * mu_a;
                double var_b = box(Sbb, z, y, x) / wn - mu_b * mu_b;
                double cov = box(Sab, z, y, x) / wn - mu_a * mu_b;
                var_a = std::max(var_a, 0.0);
                var_b = std::max(var_b, 0.0);
                acc += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                       ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                ++count;
            }
    return acc / static_cast<double>(count);
}

// 2|A n B| / (|A| + |B|); 1.0 when both masks are empty.
inline double dice(const LabelVolume& a, const LabelVolume& b, std::int32_t label) {
    if (!check_alignment(a, b, 1e-6)) throw Error(ErrorCode::MISALIGNED, "dice inputs");
    std::int64_t na = 0, nb = 0, ni = 0;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        bool ia = a.labels[i] == label, ib = b.labels[i] == label;
        na += ia;
        nb += ib;
        ni += ia && ib;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

namespace detail {

// Surface voxels: inside the mask with >= 1 face-adjacent background
// neighbor (out-of-volume counts as background).
inline std::vector<bool> surface_mask(const LabelVolume& lv, std::int32_t label) {
    const auto& sh = lv.shape;
    std::vector<bool> surf(lv.labels.size(), false);
    auto in = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
        if (z < 0 || y < 0 || x < 0 || z >= sh[0] || y >= sh[1] || x >= sh[2]) return false;
        return lv.at(z, y, x) == label;
    };
    for (std::int64_t z = 0; z < sh[0]; ++z)
        for (std::int64_t y = 0; y < sh[1]; ++y)
            for (std::int64_t x = 0; x < sh[2]; ++x) {
                if (!in(z, y, x)) continue;
                bool border = !in(z - 1, y, x) || !in(z + 1, y, x) || !in(z, y - 1, x) ||
                              !in(z, y + 1, x) || !in(z, y, x - 1) || !in(z, y, x + 1);
                if (border) surf[static_cast<std::size_t>((z * sh[1] + y) * sh[2] + x)] = true;
            }
    return surf;
}

// 1D squared-distance transform (Felzenszwalb-Huttenlocher) with an
// anisotropic axis weight: out[i] = min_j f[j] + (w*(i-j))^2.
inline void dt1d(std::vector<double>& f, double w) {
    const int n = static_cast<int>(f.size());
    if (n == 0) return;
    const double inf = std::numeric_limits<double>::infinity();
    const double w2 = w * w;
    // Only finite parabolas participate in the lower envelope.
    std::vector<int> v;
    std::vector<double> z;
    v.reserve(f.size());
    z.reserve(f.size() + 1);
    for (int q = 0; q < n; ++q) {
        if (f[static_cast<std::size_t>(q)] == inf) continue;
        double s = -inf;
        while (!v.empty()) {
            int p = v.back();
            s = ((f[static_cast<std::size_t>(q)] + w2 * q * q) -
                 (f[static_cast<std::size_t>(p)] + w2 * p * p)) /
                (2.0 * w2 * (q - p));
            if (s <= z.back()) {
                v.pop_back();
                z.pop_back();
            } else {
                break;
            }
        }
        v.push_back(q);
        z.push_back(v.size() == 1 ? -inf : s);
    }
    if (v.empty()) return; // whole line stays infinite
    z.push_back(inf);
    std::vector<double> d(f.size());
    std::size_t k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        double diff = w * (q - v[k]);
        d[static_cast<std::size_t>(q)] = f[static_cast<std::size_t>(v[k])] + diff * diff;
    }
    f = d;
}

// Exact squared Euclidean distance (mm^2) to the nearest set voxel center.
inline std::vector<double> squared_edt(const std::vector<bool>& set, const Shape3& sh,
                                       const Vec3& spacing) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> d(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) d[i] = set[i] ? 0.0 : inf;
    auto idx = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
        return static_cast<std::size_t>((z * sh[1] + y) * sh[2] + x);
    };
    std::vector<double> line;
    // x axis
    for (std::int64_t z = 0; z < sh[0]; ++z)
        for (std::int64_t y = 0; y < sh[1]; ++y) {
            line.assign(static_cast<std::size_t>(sh[2]), inf);
            for (std::int64_t x = 0; x < sh[2]; ++x) line[static_cast<std::size_t>(x)] = d[idx(z, y, x)];
            dt1d(line, spacing[2]);
            for (std::int64_t x = 0; x < sh[2]; ++x) d[idx(z, y, x)] = line[static_cast<std::size_t>(x)];
        }
    // y axis
    for (std::int64_t z = 0; z < sh[0]; ++z)
        for (std::int64_t x = 0; x < sh[2]; ++x) {
            line.assign(static_cast<std::size_t>(sh[1]), inf);
            for (std::int64_t y = 0; y < sh[1]; ++y) line[static_cast<std::size_t>(y)] = d[idx(z, y, x)];
            dt1d(line, spacing[1]);
            for (std::int64_t y = 0; y < sh[1]; ++y) d[idx(z, y, x)] = line[static_cast<std::size_t>(y)];
        }
    // z axis
    for (std::int64_t y = 0; y < sh[1]; ++y)
        for (std::int64_t x = 0; x < sh[2]; ++x) {
            line.assign(static_cast<std::size_t>(sh[0]), inf);
            for (std::int64_t z = 0; z < sh[0]; ++z) line[static_cast<std::size_t>(z)] = d[idx(z, y, x)];
            dt1d(line, spacing[0]);
            for (std::int64_t z = 0; z < sh[0]; ++z) d[idx(z, y, x)] = line[static_cast<std::size_t>(z)];
        }
    return d;
}

} // namespace detail

// Symmetric normalized surface distance at tolerance tau (mm):
// (|S_a within tau of S_b| + |S_b within tau of S_a|) / (|S_a| + |S_b|).
// 1.0 when both surfaces are empty, 0.0 when exactly one is.
inline double nsd(const LabelVolume& a, const LabelVolume& b, std::int32_t label,
                  double tolerance_mm) {
    if (!check_alignment(a, b, 1e-6)) throw Error(ErrorCode::MISALIGNED, "nsd inputs");
    if (tolerance_mm < 0) throw Error(ErrorCode::CONFIG_INVALID, "tolerance_mm must be >= 0");
    auto sa = detail::surface_mask(a, label);
    auto sb = detail::surface_mask(b, label);
    std::int64_t na = std::count(sa.begin(), sa.end(), true);
    std::int64_t nb = std::count(sb.begin(), sb.end(), true);
    if (na == 0 && nb == 0) return 1.0;
    if (na == 0 || nb == 0) return 0.0;
    auto da = detail::squared_edt(sb, a.shape, a.spacing); // distance to S_b
    auto db = detail::squared_edt(sa, a.shape, a.spacing); // distance to S_a
    const double tau2 = tolerance_mm * tolerance_mm;
    std::int64_t hit_a = 0, hit_b = 0;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (sa[i] && da[i] <= tau2 * (1.0 + 1e-12)) ++hit_a;
        if (sb[i] && db[i] <= tau2 * (1.0 + 1e-12)) ++hit_b;
    }
    return static_cast<double>(hit_a + hit_b) / static_cast<double>(na + nb);
}

// Silver-standard protocol: segment both volumes with the same frozen
// segmenter (any callable Volume -> LabelVolume), score synth-derived masks
// against real-derived masks, plus intensity metrics.
template <typename Segmenter>
MetricsReport silver_standard_eval(const Volume& real_ct, const Volume& synth_ct,
                                   Segmenter&& segment, double tolerance_mm,
                                   const std::vector<std::int32_t>& labels,
                                   const std::string& case_id = "") {
    if (!check_alignment(real_ct, synth_ct, 1e-6))
        throw Error(ErrorCode::MISALIGNED, "silver standard inputs");
    LabelVolume ref = segment(real_ct);
    LabelVolume hyp = segment(synth_ct);
    MetricsReport r;
    r.case_id = case_id;
    r.tolerance_mm = tolerance_mm;
    r.mae = mae(real_ct, synth_ct);
    std::vector<float> sorted(real_ct.data.begin(), real_ct.data.end());
    std::sort(sorted.begin(), sorted.end());
    auto pct = [&](double q) {
        double rank = q / 100.0 * static_cast<double>(sorted.size() - 1);
        return static_cast<double>(sorted[static_cast<std::size_t>(rank)]);
    };
    double range = std::max(1e-6, pct(99.5) - pct(0.5));
    r.ssim = ssim3d(real_ct, synth_ct, 7, range);
    for (auto lab : labels)
        r.per_label[lab] = {dice(hyp, ref, lab), nsd(hyp, ref, lab, tolerance_mm)};
    return r;
}

} // namespace afp

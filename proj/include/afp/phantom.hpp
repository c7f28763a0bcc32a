// Procedural paired-phantom generator: a branching tube tree (airway-like,
// low MR contrast / high CT contrast), ellipsoid blobs (organ-like) and
// cylinder shafts (bone-like), with per-class intensities plus noise.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "afp/error.hpp"
#include "afp/rng.hpp"
#include "afp/volume.hpp"

namespace afp {

constexpr std::int32_t kLabelBackground = 0;
constexpr std::int32_t kLabelTube = 1;
constexpr std::int32_t kLabelBlob = 2;
constexpr std::int32_t kLabelShaft = 3;

struct ClassIntensity {
    double mr_mean = 0.0;
    double ct_mean = 0.0;
};

struct PhantomSpec {
    Shape3 size{64, 64, 64};
    Vec3 spacing{1.0, 1.0, 1.0};
    std::uint64_t seed = 0;
    int tree_depth = 4;                 // branching generations
    double tube_radius_min = 1.2;       // voxels
    double tube_radius_max = 2.6;
    int n_blobs = 3;
    int n_shafts = 1;
    double noise_sigma_mr = 0.05;
    double noise_sigma_ct = 0.03;
    // Defaults encode the MR/CT contrast asymmetry: tubes nearly invisible
    // in MR, strongly contrasted in CT.
    std::map<std::string, ClassIntensity> intensity_table = {
        {"background", {0.00, 0.00}},
        {"tube", {0.15, 1.00}},
        {"blob", {0.60, 0.35}},
        {"shaft", {0.30, 0.70}},
    };

    void validate() const {
        if (tube_radius_min < 1.0 || tube_radius_max < tube_radius_min)
            throw Error(ErrorCode::SPEC_INVALID, "tube radius range invalid (min >= 1 voxel)");
        if (tree_depth < 1) throw Error(ErrorCode::SPEC_INVALID, "tree_depth >= 1 required");
        for (auto s : size)
            if (s < 32) throw Error(ErrorCode::SPEC_INVALID, "size >= 32 per axis required");
        for (auto s : spacing)
            if (!(s > 0)) throw Error(ErrorCode::SPEC_INVALID, "spacing must be positive");
        if (n_blobs < 0 || n_shafts < 0)
            throw Error(ErrorCode::SPEC_INVALID, "negative structure count");
        if (noise_sigma_mr < 0 || noise_sigma_ct < 0)
            throw Error(ErrorCode::SPEC_INVALID, "negative noise sigma");
        for (const char* k : {"background", "tube", "blob", "shaft"})
            if (!intensity_table.count(k))
                throw Error(ErrorCode::SPEC_INVALID, std::string("intensity_table missing ") + k);
    }
};

namespace detail {

using Pt = std::array<double, 3>; // (z,y,x) voxel coordinates

inline void paint_capsule(LabelVolume& lv, const Pt& a, const Pt& b, double r,
                          std::int32_t label) {
    Pt lo, hi;
    for (int i = 0; i < 3; ++i) {
        lo[i] = std::floor(std::min(a[i], b[i]) - r) - 1;
        hi[i] = std::ceil(std::max(a[i], b[i]) + r) + 1;
    }
    Pt ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    for (std::int64_t z = std::max<std::int64_t>(0, (std::int64_t)lo[0]);
         z <= std::min<std::int64_t>(lv.shape[0] - 1, (std::int64_t)hi[0]); ++z)
        for (std::int64_t y = std::max<std::int64_t>(0, (std::int64_t)lo[1]);
             y <= std::min<std::int64_t>(lv.shape[1] - 1, (std::int64_t)hi[1]); ++y)
            for (std::int64_t x = std::max<std::int64_t>(0, (std::int64_t)lo[2]);
                 x <= std::min<std::int64_t>(lv.shape[2] - 1, (std::int64_t)hi[2]); ++x) {
                Pt p{(double)z, (double)y, (double)x};
                double t = 0.0;
                if (len2 > 0.0) {
                    t = ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1] + (p[2] - a[2]) * ab[2]) / len2;
                    t = std::clamp(t, 0.0, 1.0);
                }
                double dz = p[0] - (a[0] + t * ab[0]);
                double dy = p[1] - (a[1] + t * ab[1]);
                double dx = p[2] - (a[2] + t * ab[2]);
                if (dz * dz + dy * dy + dx * dx <= r * r) lv.at(z, y, x) = label;
            }
}

inline void paint_ellipsoid(LabelVolume& lv, const Pt& c, const Pt& radii, std::int32_t label) {
    for (std::int64_t z = std::max<std::int64_t>(0, (std::int64_t)(c[0] - radii[0]) - 1);
         z <= std::min<std::int64_t>(lv.shape[0] - 1, (std::int64_t)(c[0] + radii[0]) + 1); ++z)
        for (std::int64_t y = std::max<std::int64_t>(0, (std::int64_t)(c[1] - radii[1]) - 1);
             y <= std::min<std::int64_t>(lv.shape[1] - 1, (std::int64_t)(c[1] + radii[1]) + 1); ++y)
            for (std::int64_t x = std::max<std::int64_t>(0, (std::int64_t)(c[2] - radii[2]) - 1);
                 x <= std::min<std::int64_t>(lv.shape[2] - 1, (std::int64_t)(c[2] + radii[2]) + 1); ++x) {
                double dz = ((double)z - c[0]) / radii[0];
                double dy = ((double)y - c[1]) / radii[1];
                double dx = ((double)x - c[2]) / radii[2];
                if (dz * dz + dy * dy + dx * dx <= 1.0) lv.at(z, y, x) = label;
            }
}

struct TreeSegment {
    Pt a, b;
    double radius;
};

// Recursive bifurcation with Murray-like tapering: child radius = 0.78 x
// parent, child length = 0.8 x parent, random azimuth around the parent
// direction. Depth 1 yields a single straight axial segment (so an analytic
// cylinder-volume oracle applies).
inline void grow_tree(std::vector<TreeSegment>& segs, Rng& rng, const Pt& start,
                      const Pt& dir, double length, double radius, int depth,
                      double min_radius) {
    Pt end{start[0] + dir[0] * length, start[1] + dir[1] * length, start[2] + dir[2] * length};
    segs.push_back({start, end, radius});
    if (depth <= 1 || radius * 0.78 < min_radius) return;
    double branch_angle = 0.55 + 0.25 * rng.uniform(); // rad, off the parent axis
    double azimuth0 = rng.uniform(0.0, 2.0 * 3.14159265358979);
    // Orthonormal frame around dir.
    Pt u{-dir[1], dir[0], 0.0};
    double un = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    if (un < 1e-6) u = {0.0, 1.0, 0.0};
    else { u[0] /= un; u[1] /= un; u[2] /= un; }
    Pt w{dir[1] * u[2] - dir[2] * u[1], dir[2] * u[0] - dir[0] * u[2], dir[0] * u[1] - dir[1] * u[0]};
    for (int child = 0; child < 2; ++child) {
        double az = azimuth0 + (child ? 3.14159265358979 : 0.0) + rng.uniform(-0.3, 0.3);
        double ca = std::cos(branch_angle), sa = std::sin(branch_angle);
        Pt nd;
        for (int i = 0; i < 3; ++i)
            nd[i] = ca * dir[i] + sa * (std::cos(az) * u[i] + std::sin(az) * w[i]);
        double nn = std::sqrt(nd[0] * nd[0] + nd[1] * nd[1] + nd[2] * nd[2]);
        for (int i = 0; i < 3; ++i) nd[i] /= nn;
        grow_tree(segs, rng, end, nd, length * 0.8, radius * 0.78, depth - 1, min_radius);
    }
}

} // namespace detail

inline VolumePair generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    LabelVolume labels(spec.size, 0, spec.spacing);
    labels.label_names = {{kLabelTube, "tube"}, {kLabelBlob, "blob"}, {kLabelShaft, "shaft"}};

    // Blobs and shafts first; the tube tree paints last and wins overlaps,
    // keeping it a single connected component.
    Rng blob_rng = rng.fork(1);
    for (int i = 0; i < spec.n_blobs; ++i) {
        detail::Pt c, radii;
        for (int a = 0; a < 3; ++a) {
            double r = blob_rng.uniform(0.08, 0.18) * static_cast<double>(spec.size[a]);
            radii[a] = std::max(2.0, r);
            c[a] = blob_rng.uniform(radii[a], static_cast<double>(spec.size[a]) - radii[a]);
        }
        detail::paint_ellipsoid(labels, c, radii, kLabelBlob);
    }
    Rng shaft_rng = rng.fork(2);
    for (int i = 0; i < spec.n_shafts; ++i) {
        detail::Pt a, b;
        // axis-dominant shaft spanning the volume along y
        a[0] = shaft_rng.uniform(0.2, 0.8) * static_cast<double>(spec.size[0]);
        a[1] = 0.0;
        a[2] = shaft_rng.uniform(0.15, 0.85) * static_cast<double>(spec.size[2]);
        b[0] = std::clamp(a[0] + shaft_rng.uniform(-0.2, 0.2) * static_cast<double>(spec.size[0]),
                          0.0, static_cast<double>(spec.size[0] - 1));
        b[1] = static_cast<double>(spec.size[1] - 1);
        b[2] = std::clamp(a[2] + shaft_rng.uniform(-0.2, 0.2) * static_cast<double>(spec.size[2]),
                          0.0, static_cast<double>(spec.size[2] - 1));
        double r = shaft_rng.uniform(0.04, 0.07) * static_cast<double>(spec.size[0]);
        detail::paint_capsule(labels, a, b, std::max(2.5, r), kLabelShaft);
    }

    // Tube tree: root enters from the z=low face at the lateral center,
    // pointing along +z. Root length scales with volume depth.
    Rng tree_rng = rng.fork(3);
    double root_radius = spec.tube_radius_min +
                         (spec.tube_radius_max - spec.tube_radius_min) * 0.9;
    double root_length = 0.45 * static_cast<double>(spec.size[0]);
    std::vector<detail::TreeSegment> segs;
    detail::Pt root{2.0, static_cast<double>(spec.size[1]) / 2.0,
                    static_cast<double>(spec.size[2]) / 2.0};
    detail::grow_tree(segs, tree_rng, root, {1.0, 0.0, 0.0}, root_length, root_radius,
                      spec.tree_depth, spec.tube_radius_min);
    for (const auto& s : segs) detail::paint_capsule(labels, s.a, s.b, s.radius, kLabelTube);

    auto mean_of = [&](std::int32_t lab, bool mr) {
        const char* key = lab == kLabelTube ? "tube"
                          : lab == kLabelBlob ? "blob"
                          : lab == kLabelShaft ? "shaft" : "background";
        const auto& ci = spec.intensity_table.at(key);
        return mr ? ci.mr_mean : ci.ct_mean;
    };

    VolumePair pair;
    pair.source = Volume(spec.size, 0.f, spec.spacing, {0, 0, 0}, Modality::MR);
    pair.target = Volume(spec.size, 0.f, spec.spacing, {0, 0, 0}, Modality::CT);
    Rng mr_rng = rng.fork(4);
    Rng ct_rng = rng.fork(5);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        std::int32_t lab = labels.labels[i];
        double mr = mean_of(lab, true);
        double ct = mean_of(lab, false);
        if (spec.noise_sigma_mr > 0) mr += mr_rng.normal(0.0, spec.noise_sigma_mr);
        if (spec.noise_sigma_ct > 0) ct += ct_rng.normal(0.0, spec.noise_sigma_ct);
        pair.source.data[i] = static_cast<float>(mr);
        pair.target.data[i] = static_cast<float>(ct);
    }
    pair.labels = std::move(labels);
    pair.validate();
    return pair;
}

// Deterministic disjoint split by shuffled indices. Validation and test get
// floor(fraction * n); training takes the remainder.
inline std::tuple<std::vector<std::size_t>, std::vector<std::size_t>, std::vector<std::size_t>>
split_indices(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed) {
    double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw Error(ErrorCode::BAD_FRACTIONS, "fractions must sum to 1");
    for (double f : fractions)
        if (f < 0) throw Error(ErrorCode::BAD_FRACTIONS, "negative fraction");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed, 0x5eed5);
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    std::size_t n_val = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n)));
    std::size_t n_test = static_cast<std::size_t>(std::floor(fractions[2] * static_cast<double>(n)));
    std::size_t n_train = n - n_val - n_test;
    std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> val(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                                 idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
    return {train, val, test};
}

} // namespace afp

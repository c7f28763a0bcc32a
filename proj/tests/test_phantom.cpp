#include <catch2/catch_amalgamated.hpp>

#include <queue>

#include "afp/phantom.hpp"

using namespace afp;

namespace {

// 26-connected component count over a label class.
int component_count(const LabelVolume& lv, std::int32_t label) {
    const auto& sh = lv.shape;
    std::vector<bool> seen(lv.labels.size(), false);
    auto idx = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
        return static_cast<std::size_t>((z * sh[1] + y) * sh[2] + x);
    };
    int comps = 0;
    for (std::int64_t z = 0; z < sh[0]; ++z)
        for (std::int64_t y = 0; y < sh[1]; ++y)
            for (std::int64_t x = 0; x < sh[2]; ++x) {
                if (lv.at(z, y, x) != label || seen[idx(z, y, x)]) continue;
                ++comps;
                std::queue<Shape3> q;
                q.push({z, y, x});
                seen[idx(z, y, x)] = true;
                while (!q.empty()) {
                    auto [cz, cy, cx] = q.front();
                    q.pop();
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                std::int64_t nz = cz + dz, ny = cy + dy, nx = cx + dx;
                                if (nz < 0 || ny < 0 || nx < 0 || nz >= sh[0] || ny >= sh[1] ||
                                    nx >= sh[2])
                                    continue;
                                if (lv.at(nz, ny, nx) != label || seen[idx(nz, ny, nx)]) continue;
                                seen[idx(nz, ny, nx)] = true;
                                q.push({nz, ny, nx});
                            }
                }
            }
    return comps;
}

} // namespace

TEST_CASE("phantom generation is deterministic") {
    PhantomSpec spec;
    spec.size = {48, 48, 48};
    spec.seed = 42;
    VolumePair a = generate_phantom(spec);
    VolumePair b = generate_phantom(spec);
    CHECK(a.source.data == b.source.data);
    CHECK(a.target.data == b.target.data);
    CHECK(a.labels->labels == b.labels->labels);

    spec.seed = 43;
    VolumePair c = generate_phantom(spec);
    CHECK(a.source.data != c.source.data);
}

TEST_CASE("single straight tube matches analytic cylinder volume") {
    PhantomSpec spec;
    spec.size = {64, 64, 64};
    spec.tree_depth = 1;
    spec.n_blobs = 0;
    spec.n_shafts = 0;
    spec.seed = 3;
    VolumePair p = generate_phantom(spec);
    CHECK(component_count(*p.labels, kLabelTube) == 1);

    std::int64_t tube_voxels = 0;
    for (auto l : p.labels->labels) tube_voxels += (l == kLabelTube);
    // capsule: cylinder plus two hemispherical end caps
    const double pi = 3.14159265358979;
    double r = spec.tube_radius_min + (spec.tube_radius_max - spec.tube_radius_min) * 0.9;
    double len = 0.45 * 64.0;
    double analytic = pi * r * r * len + 4.0 / 3.0 * pi * r * r * r;
    CHECK(static_cast<double>(tube_voxels) > 0.8 * analytic);
    CHECK(static_cast<double>(tube_voxels) < 1.2 * analytic);
}

TEST_CASE("noiseless target equals per-class means") {
    PhantomSpec spec;
    spec.size = {32, 32, 32};
    spec.noise_sigma_mr = 0.0;
    spec.noise_sigma_ct = 0.0;
    spec.seed = 9;
    VolumePair p = generate_phantom(spec);
    for (std::size_t i = 0; i < p.target.data.size(); ++i) {
        std::int32_t l = p.labels->labels[i];
        const char* key = l == kLabelTube ? "tube" : l == kLabelBlob ? "blob"
                        : l == kLabelShaft ? "shaft" : "background";
        CHECK(p.target.data[i] == Catch::Approx(spec.intensity_table.at(key).ct_mean));
        CHECK(p.source.data[i] == Catch::Approx(spec.intensity_table.at(key).mr_mean));
    }
}

TEST_CASE("tube tree is one 26-connected component and in the fine-structure regime") {
    for (std::uint64_t seed : {1ull, 2ull, 5ull}) {
        PhantomSpec spec;
        spec.size = {64, 64, 64};
        spec.tree_depth = 4;
        spec.seed = seed;
        VolumePair p = generate_phantom(spec);
        CHECK(component_count(*p.labels, kLabelTube) == 1);

        std::int64_t tube = 0, bg = 0;
        for (auto l : p.labels->labels) {
            tube += (l == kLabelTube);
            bg += (l == kLabelBackground);
        }
        double n = static_cast<double>(p.labels->labels.size());
        CHECK(static_cast<double>(tube) / n < 0.05);
        CHECK(static_cast<double>(bg) / n > 0.50);
    }
}

TEST_CASE("label-intensity consistency under noise") {
    PhantomSpec spec;
    spec.size = {48, 48, 48};
    spec.seed = 17;
    VolumePair p = generate_phantom(spec);
    for (auto [label, key] : std::vector<std::pair<std::int32_t, const char*>>{
             {kLabelBackground, "background"}, {kLabelTube, "tube"}, {kLabelBlob, "blob"}}) {
        double acc = 0;
        std::int64_t n = 0;
        for (std::size_t i = 0; i < p.target.data.size(); ++i)
            if (p.labels->labels[i] == label) {
                acc += p.target.data[i];
                ++n;
            }
        if (n == 0) continue;
        double mean = acc / static_cast<double>(n);
        double bound = 3.0 * spec.noise_sigma_ct / std::sqrt(static_cast<double>(n));
        CHECK(std::abs(mean - spec.intensity_table.at(key).ct_mean) < std::max(bound, 1e-3));
    }
}

TEST_CASE("spec validation") {
    PhantomSpec spec;
    spec.size = {16, 64, 64}; // below the 32 floor
    CHECK_THROWS_AS(generate_phantom(spec), Error);

    PhantomSpec spec2;
    spec2.tube_radius_min = 0.5;
    CHECK_THROWS_AS(generate_phantom(spec2), Error);
}

TEST_CASE("dataset split") {
    auto [train, val, test] = split_indices(10, {0.8, 0.1, 0.1}, 1);
    CHECK(train.size() == 8);
    CHECK(val.size() == 1);
    CHECK(test.size() == 1);

    auto [t2, v2, s2] = split_indices(10, {0.8, 0.1, 0.1}, 1);
    CHECK(train == t2);
    CHECK(val == v2);
    CHECK(test == s2);

    // disjoint and complete
    std::vector<std::size_t> all;
    for (auto v : {train, val, test}) all.insert(all.end(), v.begin(), v.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);

    try {
        split_indices(10, {0.5, 0.6, 0.1}, 1);
        FAIL("expected BAD_FRACTIONS");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BAD_FRACTIONS);
    }
}

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>

#include "afp/patch.hpp"
#include "afp/phantom.hpp"
#include "afp/rng.hpp"

using namespace afp;

namespace {

// Brute-force per-voxel gather oracle shared by the blend tests.
std::vector<std::vector<float>> gather(const PatchGrid& g,
                                       const std::vector<std::vector<float>>& outputs) {
    const auto& vs = g.volume_shape;
    std::vector<std::vector<float>> all(static_cast<std::size_t>(num_voxels(vs)));
    for (std::size_t wi = 0; wi < g.windows.size(); ++wi) {
        const auto& w = g.windows[wi];
        std::size_t pi = 0;
        for (std::int64_t z = w.start[0]; z < w.end[0]; ++z)
            for (std::int64_t y = w.start[1]; y < w.end[1]; ++y)
                for (std::int64_t x = w.start[2]; x < w.end[2]; ++x)
                    all[static_cast<std::size_t>((z * vs[1] + y) * vs[2] + x)].push_back(
                        outputs[wi][pi++]);
    }
    return all;
}

} // namespace

TEST_CASE("tile 64/32/0.5 gives 27 windows with stride 16") {
    PatchGrid g = tile_volume({64, 64, 64}, {32, 32, 32}, 0.5);
    CHECK(g.windows.size() == 27);
    CHECK(g.windows[1].start == Shape3{0, 0, 16});
    // sorted lexicographically, every voxel covered
    CHECK(std::is_sorted(g.windows.begin(), g.windows.end(), [](const Window& a, const Window& b) {
        return a.start < b.start;
    }));
}

TEST_CASE("shape equal to patch yields one window") {
    PatchGrid g = tile_volume({32, 32, 32}, {32, 32, 32}, 0.5);
    REQUIRE(g.windows.size() == 1);
    CHECK(g.windows[0].start == Shape3{0, 0, 0});
}

TEST_CASE("boundary windows clamp") {
    PatchGrid g = tile_volume({40, 40, 40}, {32, 32, 32}, 0.5);
    CHECK(g.windows.size() == 8); // 2 per axis
    CHECK(g.windows.back().start == Shape3{8, 8, 8});
}

TEST_CASE("patch too large rejected") {
    try {
        tile_volume({16, 16, 16}, {32, 32, 32}, 0.5);
        FAIL("expected PATCH_TOO_LARGE");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::PATCH_TOO_LARGE);
    }
}

TEST_CASE("median and mean blends match brute-force oracle bit-exactly") {
    Rng rng(101);
    for (int trial = 0; trial < 10; ++trial) {
        Shape3 shape{static_cast<std::int64_t>(20 + rng.uniform_int(29)),
                     static_cast<std::int64_t>(20 + rng.uniform_int(29)),
                     static_cast<std::int64_t>(20 + rng.uniform_int(29))};
        Shape3 patch{static_cast<std::int64_t>(8 + rng.uniform_int(9)),
                     static_cast<std::int64_t>(8 + rng.uniform_int(9)),
                     static_cast<std::int64_t>(8 + rng.uniform_int(9))};
        PatchGrid g = tile_volume(shape, patch, 0.5);
        std::vector<std::vector<float>> outs(g.windows.size());
        std::size_t plen = static_cast<std::size_t>(num_voxels(patch));
        for (auto& o : outs) {
            o.resize(plen);
            for (auto& x : o) x = static_cast<float>(rng.uniform(-1, 1));
        }
        auto med = median_blend(g, outs);
        auto mean = mean_blend(g, outs);
        auto buckets = gather(g, outs);
        for (std::size_t i = 0; i < buckets.size(); ++i) {
            auto b = buckets[i];
            REQUIRE(!b.empty());
            std::sort(b.begin(), b.end());
            float expect_med = (b.size() % 2 == 1)
                                   ? b[b.size() / 2]
                                   : 0.5f * (b[b.size() / 2 - 1] + b[b.size() / 2]);
            CHECK(med[i] == expect_med);
            double acc = 0;
            for (float x : b) acc += x;
            CHECK(mean[i] == static_cast<float>(acc / static_cast<double>(b.size())));
        }
    }
}

TEST_CASE("median of {1,2,100} is outlier-robust; mean is 34.33") {
    // single voxel covered by three windows: build a 1-thick stack
    PatchGrid g;
    g.volume_shape = {1, 1, 1};
    g.patch_size = {1, 1, 1};
    g.windows = {{{0, 0, 0}, {1, 1, 1}}, {{0, 0, 0}, {1, 1, 1}}, {{0, 0, 0}, {1, 1, 1}}};
    std::vector<std::vector<float>> outs{{1.f}, {2.f}, {100.f}};
    CHECK(median_blend(g, outs)[0] == 2.f);
    CHECK(mean_blend(g, outs)[0] == Catch::Approx(34.3333333).margin(1e-4));
}

TEST_CASE("tile-copy-blend is the identity") {
    Rng rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        Shape3 shape{static_cast<std::int64_t>(10 + rng.uniform_int(30)),
                     static_cast<std::int64_t>(10 + rng.uniform_int(30)),
                     static_cast<std::int64_t>(10 + rng.uniform_int(30))};
        Shape3 patch;
        for (int a = 0; a < 3; ++a)
            patch[a] = static_cast<std::int64_t>(4 + rng.uniform_int(static_cast<std::uint64_t>(shape[a] - 3)));
        double tiling = rng.uniform(0.2, 0.8);
        Volume v(shape, 0.f);
        for (auto& x : v.data) x = static_cast<float>(rng.uniform(-5, 5));
        PatchGrid g = tile_volume(shape, patch, tiling);
        std::vector<std::vector<float>> outs;
        for (const auto& w : g.windows) outs.push_back(extract_patch(v, w));
        CHECK(median_blend(g, outs) == v.data);
    }
}

TEST_CASE("blend is invariant under window permutation") {
    Rng rng(77);
    Shape3 shape{24, 24, 24}, patch{12, 12, 12};
    PatchGrid g = tile_volume(shape, patch, 0.5);
    std::vector<std::vector<float>> outs(g.windows.size());
    for (auto& o : outs) {
        o.resize(static_cast<std::size_t>(num_voxels(patch)));
        for (auto& x : o) x = static_cast<float>(rng.uniform(-1, 1));
    }
    auto base_med = median_blend(g, outs);
    auto base_mean = mean_blend(g, outs);

    // shuffle windows and outputs together
    std::vector<std::size_t> perm(g.windows.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
    PatchGrid g2 = g;
    std::vector<std::vector<float>> outs2(outs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        g2.windows[i] = g.windows[perm[i]];
        outs2[i] = outs[perm[i]];
    }
    CHECK(median_blend(g2, outs2) == base_med);
    CHECK(mean_blend(g2, outs2) == base_mean);
}

TEST_CASE("count mismatch rejected") {
    PatchGrid g = tile_volume({16, 16, 16}, {8, 8, 8}, 0.5);
    std::vector<std::vector<float>> outs(g.windows.size() - 1);
    try {
        median_blend(g, outs);
        FAIL("expected COUNT_MISMATCH");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::COUNT_MISMATCH);
    }
}

TEST_CASE("foreground-biased patch sampling") {
    PhantomSpec spec;
    spec.size = {48, 48, 48};
    spec.seed = 12;
    VolumePair p = generate_phantom(spec);

    auto windows = sample_training_patches(p, {16, 16, 16}, 40, 7, 1.0);
    REQUIRE(windows.size() == 40);
    for (const auto& w : windows) {
        bool has_fg = false;
        for (std::int64_t z = w.start[0]; z < w.end[0] && !has_fg; ++z)
            for (std::int64_t y = w.start[1]; y < w.end[1] && !has_fg; ++y)
                for (std::int64_t x = w.start[2]; x < w.end[2] && !has_fg; ++x)
                    has_fg = p.labels->at(z, y, x) != 0;
        CHECK(has_fg);
    }

    auto again = sample_training_patches(p, {16, 16, 16}, 40, 7, 1.0);
    for (std::size_t i = 0; i < windows.size(); ++i) CHECK(windows[i].start == again[i].start);
}

TEST_CASE("unbiased sampling is approximately uniform") {
    PhantomSpec spec;
    spec.size = {48, 48, 48};
    spec.seed = 13;
    VolumePair p = generate_phantom(spec);
    const std::int64_t range = 48 - 16 + 1; // starts per axis
    auto windows = sample_training_patches(p, {16, 16, 16}, 10000, 3, 0.0);
    // chi-square over 8 equal bins of the start z coordinate
    std::array<double, 8> counts{};
    for (const auto& w : windows)
        counts[static_cast<std::size_t>(w.start[0] * 8 / range)] += 1.0;
    double expected = 10000.0 / 8.0;
    // bins are slightly uneven (33 starts over 8 bins); compare against exact bin sizes
    std::array<double, 8> bin_sizes{};
    for (std::int64_t s = 0; s < range; ++s) bin_sizes[static_cast<std::size_t>(s * 8 / range)] += 1.0;
    double chi2 = 0;
    for (int b = 0; b < 8; ++b) {
        double e = 10000.0 * bin_sizes[static_cast<std::size_t>(b)] / static_cast<double>(range);
        chi2 += (counts[static_cast<std::size_t>(b)] - e) * (counts[static_cast<std::size_t>(b)] - e) / e;
    }
    (void)expected;
    CHECK(chi2 < 24.3); // chi2(7 dof) at p=0.001
}

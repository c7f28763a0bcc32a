#include <catch2/catch_amalgamated.hpp>

#include "afp/preprocess.hpp"
#include "afp/rng.hpp"

using namespace afp;

namespace {

// Independent trilinear interpolation used as the resampling oracle.
double oracle_trilinear(const Volume& v, double z, double y, double x) {
    auto cl = [](std::int64_t i, std::int64_t n) { return std::clamp<std::int64_t>(i, 0, n - 1); };
    std::int64_t z0 = (std::int64_t)std::floor(z), y0 = (std::int64_t)std::floor(y), x0 = (std::int64_t)std::floor(x);
    double fz = z - z0, fy = y - y0, fx = x - x0;
    double c000 = v.at(cl(z0, v.shape[0]), cl(y0, v.shape[1]), cl(x0, v.shape[2]));
    double c001 = v.at(cl(z0, v.shape[0]), cl(y0, v.shape[1]), cl(x0 + 1, v.shape[2]));
    double c010 = v.at(cl(z0, v.shape[0]), cl(y0 + 1, v.shape[1]), cl(x0, v.shape[2]));
    double c011 = v.at(cl(z0, v.shape[0]), cl(y0 + 1, v.shape[1]), cl(x0 + 1, v.shape[2]));
    double c100 = v.at(cl(z0 + 1, v.shape[0]), cl(y0, v.shape[1]), cl(x0, v.shape[2]));
    double c101 = v.at(cl(z0 + 1, v.shape[0]), cl(y0, v.shape[1]), cl(x0 + 1, v.shape[2]));
    double c110 = v.at(cl(z0 + 1, v.shape[0]), cl(y0 + 1, v.shape[1]), cl(x0, v.shape[2]));
    double c111 = v.at(cl(z0 + 1, v.shape[0]), cl(y0 + 1, v.shape[1]), cl(x0 + 1, v.shape[2]));
    double c00 = c000 * (1 - fx) + c001 * fx;
    double c01 = c010 * (1 - fx) + c011 * fx;
    double c10 = c100 * (1 - fx) + c101 * fx;
    double c11 = c110 * (1 - fx) + c111 * fx;
    double c0 = c00 * (1 - fy) + c01 * fy;
    double c1 = c10 * (1 - fy) + c11 * fy;
    return c0 * (1 - fz) + c1 * fz;
}

Volume random_volume(Rng& rng, Shape3 sh, Vec3 sp) {
    Volume v(sh, 0.f, sp);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(-3, 3));
    return v;
}

} // namespace

TEST_CASE("identity resample returns an identical volume") {
    Rng rng(1);
    Volume v = random_volume(rng, {10, 10, 10}, {1, 1, 1});
    Volume out = resample_volume(v, {1, 1, 1}, Interpolation::LINEAR);
    CHECK(out.shape == v.shape);
    CHECK(out.data == v.data);
}

TEST_CASE("downsample spacing 1.2 -> 0.6 doubles the shape and matches trilinear oracle") {
    Rng rng(2);
    Volume v = random_volume(rng, {10, 10, 10}, {1.2, 1.2, 1.2});
    Volume out = resample_volume(v, {0.6, 0.6, 0.6}, Interpolation::LINEAR);
    REQUIRE(out.shape == Shape3{20, 20, 20});
    for (int i = 0; i < 20; ++i) {
        std::int64_t z = static_cast<std::int64_t>(rng.uniform_int(20));
        std::int64_t y = static_cast<std::int64_t>(rng.uniform_int(20));
        std::int64_t x = static_cast<std::int64_t>(rng.uniform_int(20));
        double expect = oracle_trilinear(v, z * 0.5, y * 0.5, x * 0.5);
        CHECK(out.at(z, y, x) == Catch::Approx(expect).margin(1e-5));
    }
}

TEST_CASE("resample preserves constants (both interpolators)") {
    Volume v({12, 12, 12}, 3.25f, {1, 1, 1});
    for (auto interp : {Interpolation::LINEAR, Interpolation::BSPLINE3}) {
        Volume out = resample_volume(v, {0.7, 0.9, 1.3}, interp);
        for (float x : out.data) CHECK(x == Catch::Approx(3.25).margin(1e-4));
    }
}

TEST_CASE("linear resample is affine on axis-aligned ramps") {
    Volume v({16, 8, 8}, 0.f, {1, 1, 1});
    for (std::int64_t z = 0; z < 16; ++z)
        for (std::int64_t y = 0; y < 8; ++y)
            for (std::int64_t x = 0; x < 8; ++x) v.at(z, y, x) = static_cast<float>(z);
    Volume out = resample_volume(v, {0.5, 1, 1}, Interpolation::LINEAR);
    for (std::int64_t z = 0; z + 2 < out.shape[0]; ++z)
        CHECK(out.at(z, 4, 4) == Catch::Approx(z * 0.5).margin(1e-4));
}

TEST_CASE("zscore normalization") {
    Rng rng(3);
    Volume v({8, 8, 8}, 0.f);
    // half 0, half 2
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = (i % 2) ? 2.f : 0.f;
    auto [out, stats] = zscore_normalize_mr(v);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        CHECK(out.data[i] == Catch::Approx((i % 2) ? 1.0 : -1.0).margin(1e-6));
    CHECK(stats.mean == Catch::Approx(1.0));
    CHECK(stats.std == Catch::Approx(1.0));

    Volume r = random_volume(rng, {9, 9, 9}, {1, 1, 1});
    auto [rn, rstats] = zscore_normalize_mr(r);
    double mean = 0, var = 0;
    for (float x : rn.data) mean += x;
    mean /= static_cast<double>(rn.data.size());
    for (float x : rn.data) var += (x - mean) * (x - mean);
    var /= static_cast<double>(rn.data.size());
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-5);

    Volume c({4, 4, 4}, 5.f);
    try {
        zscore_normalize_mr(c);
        FAIL("expected CONSTANT_VOLUME");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::CONSTANT_VOLUME);
    }
}

TEST_CASE("percentile uses linear interpolation convention") {
    // oracle: sort-based computation on a small set
    std::vector<float> vals{10, 20, 30, 40};
    CHECK(percentile(vals, 50) == Catch::Approx(25.0));
    CHECK(percentile(vals, 0) == Catch::Approx(10.0));
    CHECK(percentile(vals, 100) == Catch::Approx(40.0));
    CHECK(percentile(vals, 25) == Catch::Approx(17.5));
}

TEST_CASE("ct normalization clip bounds from uniform foreground") {
    // 10^6 uniform samples on [0,1000]: p0.5 ~ 5, p99.5 ~ 995
    Rng rng(4);
    Shape3 sh{100, 100, 100};
    Volume v(sh, 0.f);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(0, 1000));
    std::vector<bool> fg(v.data.size(), true);
    auto [out, stats] = normalize_ct(v, fg);
    CHECK(stats.p_low == Catch::Approx(5.0).margin(1.0));
    CHECK(stats.p_high == Catch::Approx(995.0).margin(1.0));
}

TEST_CASE("ct normalization clips outliers to the bound") {
    Rng rng(5);
    Volume v({8, 8, 8}, 0.f);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(0, 1000));
    v.data[0] = 1e6f;
    std::vector<bool> fg(v.data.size(), true);
    auto [out, stats] = normalize_ct(v, fg);
    float mx = *std::max_element(out.data.begin(), out.data.end());
    double expected_max = (stats.p_high - stats.mean) / stats.std;
    CHECK(mx == Catch::Approx(expected_max).margin(1e-4));
}

TEST_CASE("ct normalization errors") {
    Volume v({4, 4, 4}, 1.f);
    std::vector<bool> empty_fg(v.data.size(), false);
    try {
        normalize_ct(v, empty_fg);
        FAIL("expected EMPTY_FOREGROUND");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EMPTY_FOREGROUND);
    }
    std::vector<bool> fg(v.data.size(), true);
    try {
        normalize_ct(v, fg);
        FAIL("expected CONSTANT_FOREGROUND");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::CONSTANT_FOREGROUND);
    }
}

TEST_CASE("denormalize inverts normalization within 1e-4") {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        Volume v({6, 6, 6}, 0.f);
        for (auto& x : v.data) x = static_cast<float>(rng.uniform(-100, 100));
        auto [n, stats] = zscore_normalize_mr(v);
        Volume back = denormalize(n, stats);
        for (std::size_t i = 0; i < v.data.size(); ++i)
            CHECK(std::abs(back.data[i] - v.data[i]) <
                  1e-4 * std::max(1.0, static_cast<double>(std::abs(v.data[i]))));
    }

    // zero volume with stats(mean=5, std=2) -> constant 5
    Volume z({4, 4, 4}, 0.f);
    Volume d = denormalize(z, NormStats{0, 0, 5, 2});
    for (float x : d.data) CHECK(x == 5.f);
}

TEST_CASE("label resampling is nearest neighbor") {
    LabelVolume lv({8, 8, 8}, 0, {1, 1, 1});
    lv.label_names = {{1, "a"}};
    lv.at(4, 4, 4) = 1;
    LabelVolume out = resample_labels(lv, {0.5, 0.5, 0.5});
    CHECK(out.shape == Shape3{16, 16, 16});
    // every emitted value must be one of the input labels (no interpolation)
    for (auto l : out.labels) CHECK((l == 0 || l == 1));
    CHECK(out.at(8, 8, 8) == 1);
}

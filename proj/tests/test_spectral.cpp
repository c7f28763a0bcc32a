#include <catch2/catch_amalgamated.hpp>

#include "afp/rng.hpp"
#include "afp/spectral.hpp"

using namespace afp;

TEST_CASE("constant and zero volumes carry no high-band energy") {
    Volume flat({8, 8, 8}, 3.5f);
    CHECK(checkerboard_energy(flat) == Catch::Approx(0.0).margin(1e-12));
    Volume zero({8, 8, 8}, 0.f);
    CHECK(checkerboard_energy(zero) == 0.0);
}

TEST_CASE("pure voxel-rate checkerboard is all high-band") {
    Volume v({8, 8, 8}, 0.f);
    for (std::int64_t z = 0; z < 8; ++z)
        for (std::int64_t y = 0; y < 8; ++y)
            for (std::int64_t x = 0; x < 8; ++x)
                v.at(z, y, x) = ((z + y + x) % 2 == 0) ? 1.f : -1.f;
    CHECK(checkerboard_energy(v) == Catch::Approx(1.0).margin(1e-9));

    // single-axis alternation too
    Volume a({8, 8, 8}, 0.f);
    for (std::int64_t z = 0; z < 8; ++z)
        for (std::int64_t y = 0; y < 8; ++y)
            for (std::int64_t x = 0; x < 8; ++x)
                a.at(z, y, x) = (x % 2 == 0) ? 1.f : -1.f;
    CHECK(checkerboard_energy(a) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("smooth gaussian blob is low-band") {
    Volume v({12, 12, 12}, 0.f);
    for (std::int64_t z = 0; z < 12; ++z)
        for (std::int64_t y = 0; y < 12; ++y)
            for (std::int64_t x = 0; x < 12; ++x) {
                double r2 = (z - 5.5) * (z - 5.5) + (y - 5.5) * (y - 5.5) + (x - 5.5) * (x - 5.5);
                v.at(z, y, x) = static_cast<float>(std::exp(-r2 / 18.0));
            }
    CHECK(checkerboard_energy(v) < 0.05);
}

TEST_CASE("superposition interpolates between the extremes") {
    // smooth ramp plus a growing checkerboard component raises the score
    auto make = [](float amp) {
        Volume v({8, 8, 8}, 0.f);
        for (std::int64_t z = 0; z < 8; ++z)
            for (std::int64_t y = 0; y < 8; ++y)
                for (std::int64_t x = 0; x < 8; ++x)
                    v.at(z, y, x) = static_cast<float>(x) * 0.1f +
                                    amp * (((z + y + x) % 2 == 0) ? 1.f : -1.f);
        return v;
    };
    double e0 = checkerboard_energy(make(0.f));
    double e1 = checkerboard_energy(make(0.2f));
    double e2 = checkerboard_energy(make(1.f));
    CHECK(e0 < e1);
    CHECK(e1 < e2);
    CHECK(e2 > 0.5);
}

TEST_CASE("white noise spreads well over both bands") {
    Rng rng(40);
    Volume v({10, 10, 10}, 0.f);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(-1, 1));
    double e = checkerboard_energy(v);
    CHECK(e > 0.3);
    CHECK(e < 1.0);
}

// Checkerboard diagnostic: fraction of 3D spectral power lying in the
// top-octave band (any axis frequency in its Nyquist half). Separable naive
// DFT, adequate at desk scale.
#pragma once

#include <complex>
#include <vector>

#include "afp/volume.hpp"

namespace afp {

namespace detail {

// In-place DFT along one axis of a z-major complex grid.
inline void dft_axis(std::vector<std::complex<double>>& g, const Shape3& sh, int axis) {
    const std::int64_t n = sh[axis];
    std::vector<std::complex<double>> tw(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k)
        for (std::int64_t j = 0; j < n; ++j) {
            double ang = -2.0 * 3.14159265358979323846 * static_cast<double>(k * j % n) /
                         static_cast<double>(n);
            tw[static_cast<std::size_t>(k * n + j)] = {std::cos(ang), std::sin(ang)};
        }
    auto idx = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
        return static_cast<std::size_t>((z * sh[1] + y) * sh[2] + x);
    };
    std::vector<std::complex<double>> line(static_cast<std::size_t>(n));
    std::int64_t a0 = axis == 0 ? 1 : 0, a1 = axis == 2 ? 1 : 2;
    Shape3 other{sh[a0], sh[a1], 0};
    for (std::int64_t i = 0; i < other[0]; ++i)
        for (std::int64_t j = 0; j < other[1]; ++j) {
            auto at = [&](std::int64_t t) {
                if (axis == 0) return idx(t, i, j);
                if (axis == 1) return idx(i, t, j);
                return idx(i, j, t);
            };
            for (std::int64_t t = 0; t < n; ++t) line[static_cast<std::size_t>(t)] = g[at(t)];
            for (std::int64_t k = 0; k < n; ++k) {
                std::complex<double> acc{0, 0};
                for (std::int64_t t = 0; t < n; ++t)
                    acc += line[static_cast<std::size_t>(t)] * tw[static_cast<std::size_t>(k * n + t)];
                g[at(k)] = acc;
            }
        }
}

} // namespace detail

inline double checkerboard_energy(const Volume& v) {
    const auto& sh = v.shape;
    std::vector<std::complex<double>> g(v.data.begin(), v.data.end());
    for (int a = 0; a < 3; ++a) detail::dft_axis(g, sh, a);
    double total = 0, band = 0;
    auto top_half = [](std::int64_t f, std::int64_t n) {
        std::int64_t folded = std::min(f, n - f); // symmetric frequency
        return static_cast<double>(folded) / static_cast<double>(n) >= 0.25;
    };
    for (std::int64_t z = 0; z < sh[0]; ++z)
        for (std::int64_t y = 0; y < sh[1]; ++y)
            for (std::int64_t x = 0; x < sh[2]; ++x) {
                double p = std::norm(g[static_cast<std::size_t>((z * sh[1] + y) * sh[2] + x)]);
                total += p;
                if (top_half(z, sh[0]) || top_half(y, sh[1]) || top_half(x, sh[2])) band += p;
            }
    if (total <= 0) return 0.0;
    return band / total;
}

} // namespace afp

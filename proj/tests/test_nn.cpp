#include <catch2/catch_amalgamated.hpp>

#include "afp/nn/optim.hpp"
#include "afp/nn/unet.hpp"

using namespace afp;
using namespace afp::nn;

namespace {

template <typename T>
Tensor<T> random_tensor(Rng& rng, std::int64_t c, std::int64_t d, std::int64_t h,
                        std::int64_t w, double lo = -1, double hi = 1) {
    Tensor<T> t(c, d, h, w);
    for (auto& x : t.v) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

UNetConfig small_cfg(int depth = 2, DecoderMode mode = DecoderMode::TRANSPOSED) {
    UNetConfig c;
    c.base_channels = 4;
    c.depth = depth;
    c.out_channels = 2;
    c.decoder_mode = mode;
    return c;
}

} // namespace

TEST_CASE("conv3d shape contract and stride") {
    Rng rng(10);
    Conv3d<float> conv;
    conv.init(2, 5, 3, 1, 1, rng);
    auto x = random_tensor<float>(rng, 2, 8, 8, 8);
    auto y = conv.forward(x, false);
    CHECK(y.c == 5);
    CHECK(y.d == 8);
    CHECK(y.h == 8);
    CHECK(y.w == 8);

    Conv3d<float> s2;
    s2.init(2, 3, 3, 2, 1, rng);
    auto y2 = s2.forward(x, false);
    CHECK(y2.c == 3);
    CHECK(y2.d == 4);
    CHECK(y2.h == 4);
    CHECK(y2.w == 4);
}

TEST_CASE("conv transpose doubles spatial dims") {
    Rng rng(11);
    ConvTranspose3d<float> up;
    up.init(6, 3, rng);
    auto x = random_tensor<float>(rng, 6, 4, 4, 4);
    auto y = up.forward(x, false);
    CHECK(y.c == 3);
    CHECK(y.d == 8);
    CHECK(y.h == 8);
    CHECK(y.w == 8);
}

TEST_CASE("unet output shape equals input spatial shape") {
    Rng rng(12);
    for (auto mode : {DecoderMode::TRANSPOSED, DecoderMode::UPSAMPLE_CONV}) {
        UNet<float> net(small_cfg(3, mode), 7);
        auto x = random_tensor<float>(rng, 1, 16, 16, 16);
        auto y = net.infer(x);
        CHECK(y.c == 2);
        CHECK(y.d == 16);
        CHECK(y.h == 16);
        CHECK(y.w == 16);
    }
}

TEST_CASE("unet rejects input not divisible by downsampling factor") {
    UNet<float> net(small_cfg(3), 7);
    Tensor<float> bad(1, 33, 32, 32);
    CHECK_THROWS_AS(net.infer(bad), Error);
    Tensor<float> wrong_c(2, 16, 16, 16);
    CHECK_THROWS_AS(net.infer(wrong_c), Error);
}

TEST_CASE("seeded init is deterministic; different seeds differ") {
    UNet<float> a(small_cfg(), 99), b(small_cfg(), 99), c(small_cfg(), 100);
    std::vector<float> wa, wb, wc;
    a.save_weights(wa);
    b.save_weights(wb);
    c.save_weights(wc);
    CHECK(wa == wb);
    CHECK(wa != wc);

    Rng rng(13);
    auto x = random_tensor<float>(rng, 1, 8, 8, 8);
    auto ya = a.infer(x);
    auto yb = b.infer(x);
    CHECK(ya.v == yb.v);
}

TEST_CASE("weight save/load round trip") {
    Rng rng(14);
    UNet<float> a(small_cfg(), 1), b(small_cfg(), 2);
    std::vector<float> w;
    a.save_weights(w);
    b.load_weights(w);
    auto x = random_tensor<float>(rng, 1, 8, 8, 8);
    CHECK(a.infer(x).v == b.infer(x).v);

    std::vector<float> torn(w.begin(), w.end() - 1);
    CHECK_THROWS_AS(b.load_weights(torn), Error);
}

TEST_CASE("feature taps: count, shapes, non-negativity") {
    Rng rng(15);
    const int depth = 3;
    UNet<float> net(small_cfg(depth), 21);
    auto taps = FeatureTapConfig::all_blocks(depth);
    // enc0..enc2, dec1, prefinal
    CHECK(taps.tap_ids.size() == 4);
    CHECK(taps.include_prefinal);

    auto x = random_tensor<float>(rng, 1, 16, 16, 16);
    auto [out, feats] = net.forward_with_taps(x, taps);
    REQUIRE(feats.size() == 5);
    // post-ReLU maps are non-negative
    for (const auto& f : feats)
        for (float v : f.v) CHECK(v >= 0.f);
    // encoder taps shrink spatially by powers of two
    CHECK(feats[0].d == 16);
    CHECK(feats[1].d == 8);
    CHECK(feats[2].d == 4);
    CHECK(feats[3].d == 8);  // dec1
    CHECK(feats[4].d == 16); // prefinal
    CHECK(out.c == 2);
}

TEST_CASE("taps do not perturb the forward output") {
    Rng rng(16);
    UNet<float> net(small_cfg(2), 33);
    auto x = random_tensor<float>(rng, 1, 8, 8, 8);
    auto plain = net.infer(x);
    auto [tapped, feats] = net.forward_with_taps(x, FeatureTapConfig::all_blocks(2));
    CHECK(plain.v == tapped.v);
}

TEST_CASE("freeze is idempotent and frozen backward leaves grads untouched") {
    Rng rng(17);
    UNet<float> net(small_cfg(2), 5);
    net.freeze();
    net.freeze();
    CHECK(net.frozen());

    auto x = random_tensor<float>(rng, 1, 8, 8, 8);
    auto taps = FeatureTapConfig::all_blocks(2);
    auto ids = net.resolve_taps(taps);
    auto [out, feats] = net.forward_with_taps(x, taps);
    std::vector<Tensor<float>> seeds;
    for (auto& f : feats) {
        Tensor<float> s(f.c, f.d, f.h, f.w, 1.f);
        seeds.push_back(s);
    }
    net.zero_grad();
    auto gin = net.backward_from_taps(ids, seeds);
    CHECK(gin.same_shape(x));
    for (auto* p : net.params())
        for (float g : p->grad) CHECK(g == 0.f);

    // frozen forward stays deterministic
    auto y1 = net.infer(x);
    auto y2 = net.infer(x);
    CHECK(y1.v == y2.v);
}

TEST_CASE("instance norm output has zero mean unit variance per channel") {
    Rng rng(18);
    InstanceNorm<double> norm;
    norm.init(3);
    auto x = random_tensor<double>(rng, 3, 6, 6, 6, -3, 5);
    auto y = norm.forward(x, false);
    for (std::int64_t c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        const std::int64_t n = y.spatial();
        for (std::int64_t i = 0; i < n; ++i) mean += y.v[static_cast<std::size_t>(c * n + i)];
        mean /= static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i) {
            double d = y.v[static_cast<std::size_t>(c * n + i)] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        CHECK(mean == Catch::Approx(0.0).margin(1e-10));
        CHECK(var == Catch::Approx(1.0).margin(1e-6));
    }
}

namespace {

// Scalar objective over the network output for finite-difference checks.
template <typename Net, typename T>
double objective(Net& net, const Tensor<T>& x) {
    auto y = net.infer(x);
    double s = 0;
    for (std::size_t i = 0; i < y.v.size(); ++i)
        s += 0.5 * static_cast<double>(y.v[i]) * y.v[i] * (i % 3 == 0 ? 1.0 : -0.5);
    return s;
}

} // namespace

TEST_CASE("unet input gradient matches central finite differences (64-bit)") {
    Rng rng(19);
    UNetConfig cfg = small_cfg(2);
    cfg.base_channels = 4;
    UNet<double> net(cfg, 77);

    auto x = random_tensor<double>(rng, 1, 6, 6, 6);
    auto y = net.forward(x);
    Tensor<double> gout(y.c, y.d, y.h, y.w);
    for (std::size_t i = 0; i < y.v.size(); ++i)
        gout.v[i] = y.v[i] * (i % 3 == 0 ? 1.0 : -0.5);
    net.zero_grad();
    auto gin = net.backward(gout);
    REQUIRE(gin.same_shape(x));

    const double eps = 1e-5;
    Rng pick(20);
    double max_rel = 0;
    for (int t = 0; t < 25; ++t) {
        std::size_t i = static_cast<std::size_t>(pick.uniform_int(static_cast<int>(x.v.size())));
        Tensor<double> xp = x, xm = x;
        xp.v[i] += eps;
        xm.v[i] -= eps;
        double fd = (objective(net, xp) - objective(net, xm)) / (2 * eps);
        double denom = std::max({std::abs(fd), std::abs(gin.v[i]), 1e-8});
        max_rel = std::max(max_rel, std::abs(fd - gin.v[i]) / denom);
    }
    CHECK(max_rel < 1e-5);
}

TEST_CASE("upsample-conv decoder gradient also checks out") {
    Rng rng(21);
    UNetConfig cfg = small_cfg(2, DecoderMode::UPSAMPLE_CONV);
    cfg.base_channels = 4;
    cfg.norm = NormKind::NONE;
    UNet<double> net(cfg, 78);

    auto x = random_tensor<double>(rng, 1, 6, 6, 6);
    auto y = net.forward(x);
    Tensor<double> gout(y.c, y.d, y.h, y.w);
    for (std::size_t i = 0; i < y.v.size(); ++i)
        gout.v[i] = y.v[i] * (i % 3 == 0 ? 1.0 : -0.5);
    net.zero_grad();
    auto gin = net.backward(gout);

    const double eps = 1e-5;
    Rng pick(22);
    for (int t = 0; t < 15; ++t) {
        std::size_t i = static_cast<std::size_t>(pick.uniform_int(static_cast<int>(x.v.size())));
        Tensor<double> xp = x, xm = x;
        xp.v[i] += eps;
        xm.v[i] -= eps;
        double fd = (objective(net, xp) - objective(net, xm)) / (2 * eps);
        double denom = std::max({std::abs(fd), std::abs(gin.v[i]), 1e-8});
        CHECK(std::abs(fd - gin.v[i]) / denom < 1e-5);
    }
}

TEST_CASE("parameter gradients match finite differences on a tiny net") {
    Rng rng(23);
    UNetConfig cfg = small_cfg(2);
    cfg.base_channels = 4;
    cfg.convs_per_block = 1;
    UNet<double> net(cfg, 79);

    auto x = random_tensor<double>(rng, 1, 4, 4, 4);
    auto y = net.forward(x);
    Tensor<double> gout(y.c, y.d, y.h, y.w, 1.0);
    net.zero_grad();
    net.backward(gout);

    auto loss = [&]() {
        auto o = net.infer(x);
        double s = 0;
        for (double v : o.v) s += v;
        return s;
    };
    const double eps = 1e-6;
    Rng pick(24);
    auto params = net.params();
    for (int t = 0; t < 20; ++t) {
        auto* p = params[static_cast<std::size_t>(pick.uniform_int(static_cast<int>(params.size())))];
        std::size_t i = static_cast<std::size_t>(pick.uniform_int(static_cast<int>(p->value.size())));
        double orig = p->value[i];
        p->value[i] = orig + eps;
        double fp = loss();
        p->value[i] = orig - eps;
        double fm = loss();
        p->value[i] = orig;
        double fd = (fp - fm) / (2 * eps);
        // conv biases ahead of instance norm have exact-zero gradients; there
        // the FD probe only measures roundoff, so compare against zero.
        if (std::max(std::abs(fd), std::abs(p->grad[i])) < 1e-6) {
            CHECK(std::abs(fd - p->grad[i]) < 1e-6);
        } else {
            double denom = std::max(std::abs(fd), std::abs(p->grad[i]));
            CHECK(std::abs(fd - p->grad[i]) / denom < 1e-4);
        }
    }
}

TEST_CASE("adam step moves params against gradient") {
    Param<double> p;
    p.value = {1.0, -2.0};
    p.grad = {0.5, -0.5};
    Adam<double> opt(0.1);
    opt.step({&p});
    CHECK(p.value[0] < 1.0);
    CHECK(p.value[1] > -2.0);
}

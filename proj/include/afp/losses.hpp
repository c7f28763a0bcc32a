// Training losses: L1, feature-space AFP (L1 over frozen-extractor taps,
// averaged over layers), hinge adversarial, feature matching, and the
// Dice+cross-entropy compound used to train the segmentation backbone.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "afp/error.hpp"
#include "afp/nn/tensor.hpp"
#include "afp/nn/unet.hpp"

namespace afp {

enum class AfpReduction { MEAN_PER_LAYER, SUM_PER_LAYER };

struct LossConfig {
    double w_l1 = 1.0;
    double w_afp = 0.0;
    double w_adv = 0.0;
    double w_fm = 0.0;
    std::optional<std::vector<double>> afp_layer_weights; // default uniform
    AfpReduction afp_reduction = AfpReduction::MEAN_PER_LAYER;

    void validate() const {
        if (w_l1 < 0 || w_afp < 0 || w_adv < 0 || w_fm < 0)
            throw Error(ErrorCode::CONFIG_INVALID, "loss weights must be >= 0");
        if (w_l1 == 0 && w_afp == 0 && w_adv == 0 && w_fm == 0)
            throw Error(ErrorCode::CONFIG_INVALID, "at least one loss weight must be > 0");
    }
};

// Mean absolute voxel difference. Optionally writes d(loss)/dx.
template <typename T>
double l1_loss(const nn::Tensor<T>& x, const nn::Tensor<T>& y, nn::Tensor<T>* grad_x = nullptr) {
    if (!x.same_shape(y)) throw Error(ErrorCode::SHAPE_MISMATCH, "l1 inputs");
    const double inv_n = 1.0 / static_cast<double>(x.numel());
    double acc = 0;
    if (grad_x) *grad_x = nn::Tensor<T>(x.c, x.d, x.h, x.w);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        double d = static_cast<double>(x.v[i]) - static_cast<double>(y.v[i]);
        acc += std::abs(d);
        if (grad_x) grad_x->v[i] = static_cast<T>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) * inv_n);
    }
    return acc * inv_n;
}

// Degenerate one-tap extractor with identity features; with MEAN_PER_LAYER
// reduction the AFP loss collapses to plain L1. Used by tests.
template <typename T>
struct IdentityExtractor {
    bool frozen() const { return true; }
    std::vector<int> resolve_taps(const nn::FeatureTapConfig&) const { return {0}; }
    std::pair<nn::Tensor<T>, std::vector<nn::Tensor<T>>> forward_with_taps(
        const nn::Tensor<T>& x, const nn::FeatureTapConfig&) {
        return {x, {x}};
    }
    nn::Tensor<T> backward_from_taps(const std::vector<int>&,
                                     const std::vector<nn::Tensor<T>>& seeds) {
        return seeds.at(0);
    }
};

// AFP loss: (1/N) sum_i w_i * reduce(|phi_i(x) - phi_i(y)|), phi = frozen
// extractor taps. The reference branch y carries no gradient. Optionally
// writes d(loss)/dx through the extractor.
template <typename T, typename Extractor>
double afp_loss(const nn::Tensor<T>& x, const nn::Tensor<T>& y, Extractor& extractor,
                const nn::FeatureTapConfig& taps, const LossConfig& cfg,
                nn::Tensor<T>* grad_x = nullptr) {
    if (!x.same_shape(y)) throw Error(ErrorCode::SHAPE_MISMATCH, "afp inputs");
    if (!extractor.frozen())
        throw Error(ErrorCode::EXTRACTOR_NOT_FROZEN, "afp extractor must be frozen");
    auto ids = extractor.resolve_taps(taps);
    const std::size_t n_taps = ids.size();
    if (cfg.afp_layer_weights && cfg.afp_layer_weights->size() != n_taps)
        throw Error(ErrorCode::CONFIG_INVALID, "afp_layer_weights length != number of taps");

    auto [out_y, feats_y] = extractor.forward_with_taps(y, taps);
    // x runs second so the extractor caches hold the x-branch for backward.
    auto [out_x, feats_x] = extractor.forward_with_taps(x, taps);

    const double inv_n = 1.0 / static_cast<double>(n_taps);
    double loss = 0;
    std::vector<nn::Tensor<T>> seeds;
    if (grad_x) seeds.reserve(n_taps);
    for (std::size_t i = 0; i < n_taps; ++i) {
        const auto& fx = feats_x[i];
        const auto& fy = feats_y[i];
        double w = cfg.afp_layer_weights ? (*cfg.afp_layer_weights)[i] : 1.0;
        double red = cfg.afp_reduction == AfpReduction::MEAN_PER_LAYER
                         ? 1.0 / static_cast<double>(fx.numel())
                         : 1.0;
        double acc = 0;
        nn::Tensor<T> seed;
        if (grad_x) seed = nn::Tensor<T>(fx.c, fx.d, fx.h, fx.w);
        for (std::size_t j = 0; j < fx.v.size(); ++j) {
            double d = static_cast<double>(fx.v[j]) - static_cast<double>(fy.v[j]);
            acc += std::abs(d);
            if (grad_x)
                seed.v[j] = static_cast<T>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) * w * red * inv_n);
        }
        loss += w * red * acc;
        if (grad_x) seeds.push_back(std::move(seed));
    }
    loss *= inv_n;
    if (grad_x) *grad_x = extractor.backward_from_taps(ids, seeds);
    return loss;
}

// Hinge adversarial losses:
//   loss_D = mean(relu(1 - s_real)) + mean(relu(1 + s_fake))
//   loss_G = -mean(s_fake)
struct HingeLosses {
    double loss_d = 0;
    double loss_g = 0;
};

template <typename T>
HingeLosses hinge_adv_losses(const nn::Tensor<T>& real_scores, const nn::Tensor<T>& fake_scores,
                             nn::Tensor<T>* grad_d_real = nullptr,
                             nn::Tensor<T>* grad_d_fake = nullptr,
                             nn::Tensor<T>* grad_g_fake = nullptr) {
    HingeLosses out;
    const double inv_r = 1.0 / static_cast<double>(real_scores.numel());
    const double inv_f = 1.0 / static_cast<double>(fake_scores.numel());
    if (grad_d_real) *grad_d_real = nn::Tensor<T>(real_scores.c, real_scores.d, real_scores.h, real_scores.w);
    if (grad_d_fake) *grad_d_fake = nn::Tensor<T>(fake_scores.c, fake_scores.d, fake_scores.h, fake_scores.w);
    if (grad_g_fake) *grad_g_fake = nn::Tensor<T>(fake_scores.c, fake_scores.d, fake_scores.h, fake_scores.w);
    for (std::size_t i = 0; i < real_scores.v.size(); ++i) {
        double s = static_cast<double>(real_scores.v[i]);
        if (1.0 - s > 0) {
            out.loss_d += (1.0 - s) * inv_r;
            if (grad_d_real) grad_d_real->v[i] = static_cast<T>(-inv_r);
        }
    }
    for (std::size_t i = 0; i < fake_scores.v.size(); ++i) {
        double s = static_cast<double>(fake_scores.v[i]);
        if (1.0 + s > 0) {
            out.loss_d += (1.0 + s) * inv_f;
            if (grad_d_fake) grad_d_fake->v[i] = static_cast<T>(inv_f);
        }
        out.loss_g -= s * inv_f;
        if (grad_g_fake) grad_g_fake->v[i] = static_cast<T>(-inv_f);
    }
    return out;
}

// Mean over layers of the mean absolute feature difference; the real branch
// is constant. Optionally writes grads wrt the fake features.
template <typename T>
double feature_matching_loss(const std::vector<nn::Tensor<T>>& real_feats,
                             const std::vector<nn::Tensor<T>>& fake_feats,
                             std::vector<nn::Tensor<T>>* grad_fake = nullptr) {
    if (real_feats.size() != fake_feats.size())
        throw Error(ErrorCode::LENGTH_MISMATCH, "feature matching lists");
    if (real_feats.empty()) throw Error(ErrorCode::LENGTH_MISMATCH, "empty feature lists");
    const double inv_l = 1.0 / static_cast<double>(real_feats.size());
    double loss = 0;
    if (grad_fake) grad_fake->clear();
    for (std::size_t i = 0; i < real_feats.size(); ++i) {
        nn::Tensor<T> g;
        loss += inv_l * l1_loss(fake_feats[i], real_feats[i], grad_fake ? &g : nullptr);
        if (grad_fake) {
            for (auto& v : g.v) v = static_cast<T>(static_cast<double>(v) * inv_l);
            grad_fake->push_back(std::move(g));
        }
    }
    return loss;
}

// Compound segmentation objective: cross-entropy + soft Dice over the
// non-background classes, both on softmax probabilities. Returns the loss
// and optionally d(loss)/d(logits).
template <typename T>
double dice_ce_loss(const nn::Tensor<T>& logits, const std::vector<std::int32_t>& target,
                    nn::Tensor<T>* grad_logits = nullptr) {
    const std::int64_t C = logits.c;
    const std::int64_t n = logits.spatial();
    if (static_cast<std::int64_t>(target.size()) != n)
        throw Error(ErrorCode::SHAPE_MISMATCH, "target size != logit spatial size");
    for (auto t : target)
        if (t < 0 || t >= C)
            throw Error(ErrorCode::SHAPE_MISMATCH, "label id exceeds out_labels");

    // softmax per voxel
    std::vector<double> prob(static_cast<std::size_t>(C * n));
    for (std::int64_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (std::int64_t c = 0; c < C; ++c)
            mx = std::max(mx, static_cast<double>(logits.v[static_cast<std::size_t>(c * n + i)]));
        double z = 0;
        for (std::int64_t c = 0; c < C; ++c) {
            double e = std::exp(static_cast<double>(logits.v[static_cast<std::size_t>(c * n + i)]) - mx);
            prob[static_cast<std::size_t>(c * n + i)] = e;
            z += e;
        }
        for (std::int64_t c = 0; c < C; ++c) prob[static_cast<std::size_t>(c * n + i)] /= z;
    }

    const double inv_n = 1.0 / static_cast<double>(n);
    double ce = 0;
    for (std::int64_t i = 0; i < n; ++i)
        ce -= inv_n * std::log(std::max(1e-12, prob[static_cast<std::size_t>(target[static_cast<std::size_t>(i)] * n + i)]));

    // soft Dice over classes 1..C-1
    const double eps = 1e-6;
    const std::int64_t K = C - 1;
    std::vector<double> inter(static_cast<std::size_t>(C), 0), uni(static_cast<std::size_t>(C), 0);
    for (std::int64_t c = 1; c < C; ++c) {
        for (std::int64_t i = 0; i < n; ++i) {
            double p = prob[static_cast<std::size_t>(c * n + i)];
            double t = target[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0;
            inter[static_cast<std::size_t>(c)] += p * t;
            uni[static_cast<std::size_t>(c)] += p + t;
        }
    }
    double dice_term = 0;
    for (std::int64_t c = 1; c < C; ++c)
        dice_term += 2.0 * inter[static_cast<std::size_t>(c)] / (uni[static_cast<std::size_t>(c)] + eps);
    double loss = ce + (K > 0 ? 1.0 - dice_term / static_cast<double>(K) : 0.0);

    if (grad_logits) {
        *grad_logits = nn::Tensor<T>(logits.c, logits.d, logits.h, logits.w);
        // dL/dp then chain through softmax per voxel.
        for (std::int64_t i = 0; i < n; ++i) {
            std::array<double, 64> dLdp{}; // C <= 64 in practice
            for (std::int64_t c = 0; c < C; ++c) {
                double d = 0;
                if (target[static_cast<std::size_t>(i)] == c)
                    d -= inv_n / std::max(1e-12, prob[static_cast<std::size_t>(c * n + i)]);
                if (c >= 1 && K > 0) {
                    double U = uni[static_cast<std::size_t>(c)] + eps;
                    double t = target[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0;
                    double dd = (2.0 * t * U - 2.0 * inter[static_cast<std::size_t>(c)]) / (U * U);
                    d -= dd / static_cast<double>(K);
                }
                dLdp[static_cast<std::size_t>(c)] = d;
            }
            double dot = 0;
            for (std::int64_t c = 0; c < C; ++c)
                dot += dLdp[static_cast<std::size_t>(c)] * prob[static_cast<std::size_t>(c * n + i)];
            for (std::int64_t c = 0; c < C; ++c) {
                double p = prob[static_cast<std::size_t>(c * n + i)];
                grad_logits->v[static_cast<std::size_t>(c * n + i)] =
                    static_cast<T>(p * (dLdp[static_cast<std::size_t>(c)] - dot));
            }
        }
    }
    return loss;
}

} // namespace afp

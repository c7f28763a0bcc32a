// Training loops: segmentation backbone (Dice+CE) and translator (two-stage
// L1 / AFP / adversarial composite), plus checkpoint files and sliding-window
// whole-volume inference with overlap blending.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "afp/error.hpp"
#include "afp/losses.hpp"
#include "afp/nn/optim.hpp"
#include "afp/nn/unet.hpp"
#include "afp/patch.hpp"
#include "afp/volume.hpp"

namespace afp {

// ---------------------------------------------------------------------------
// Checkpoints: raw float32 weight blob + JSON sidecar (config + fingerprint).

struct ModelCheckpoint {
    std::vector<float> weights;
    nlohmann::json config;
    std::string fingerprint;

    void save(const std::string& stem) const {
        std::ofstream bin(stem + ".bin", std::ios::binary);
        if (!bin) throw Error(ErrorCode::UNREADABLE_FILE, "cannot write " + stem + ".bin");
        std::uint64_t n = weights.size();
        bin.write(reinterpret_cast<const char*>(&n), sizeof n);
        bin.write(reinterpret_cast<const char*>(weights.data()),
                  static_cast<std::streamsize>(n * sizeof(float)));
        nlohmann::json side{{"config", config},
                            {"fingerprint", fingerprint},
                            {"n_weights", n}};
        std::ofstream js(stem + ".json");
        if (!js) throw Error(ErrorCode::UNREADABLE_FILE, "cannot write " + stem + ".json");
        js << side.dump(2) << "\n";
    }

    static ModelCheckpoint load(const std::string& stem) {
        std::ifstream bin(stem + ".bin", std::ios::binary);
        if (!bin) throw Error(ErrorCode::UNREADABLE_FILE, "cannot read " + stem + ".bin");
        std::uint64_t n = 0;
        bin.read(reinterpret_cast<char*>(&n), sizeof n);
        ModelCheckpoint ck;
        ck.weights.resize(n);
        bin.read(reinterpret_cast<char*>(ck.weights.data()),
                 static_cast<std::streamsize>(n * sizeof(float)));
        if (!bin)
            throw Error(ErrorCode::UNREADABLE_FILE, stem + ".bin shorter than its header claims");
        std::ifstream js(stem + ".json");
        if (!js) throw Error(ErrorCode::UNREADABLE_FILE, "cannot read " + stem + ".json");
        nlohmann::json side = nlohmann::json::parse(js, nullptr, true);
        ck.config = side.at("config");
        ck.fingerprint = side.value("fingerprint", "");
        if (side.value("n_weights", n) != n)
            throw Error(ErrorCode::SHAPE_INCOMPATIBLE, "weight count disagrees with sidecar");
        return ck;
    }
};

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t h, const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace detail

inline std::uint64_t hash_volume(std::uint64_t h, const Volume& v) {
    h = detail::fnv1a(h, v.shape.data(), sizeof v.shape);
    return detail::fnv1a(h, v.data.data(), v.data.size() * sizeof(float));
}

inline std::uint64_t hash_labels(std::uint64_t h, const LabelVolume& lv) {
    h = detail::fnv1a(h, lv.shape.data(), sizeof lv.shape);
    return detail::fnv1a(h, lv.labels.data(), lv.labels.size() * sizeof(std::int32_t));
}

// ---------------------------------------------------------------------------
// Whole-volume inference over the 0.5-overlap patch grid.

enum class BlendMode { MEDIAN, MEAN };

// Runs the translator over every grid window and blends overlaps per voxel.
template <typename T>
Volume translate_volume(nn::UNet<T>& model, const Volume& in, const Shape3& patch_size,
                        double tiling = 0.5, BlendMode blend = BlendMode::MEDIAN) {
    PatchGrid grid = tile_volume(in.shape, patch_size, tiling);
    std::vector<std::vector<float>> outputs(grid.windows.size());
    for (std::size_t i = 0; i < grid.windows.size(); ++i) {
        auto x = nn::tensor_from_patch<T>(extract_patch(in, grid.windows[i]), patch_size);
        auto y = model.infer(x);
        outputs[i].resize(static_cast<std::size_t>(y.spatial()));
        for (std::size_t j = 0; j < outputs[i].size(); ++j)
            outputs[i][j] = static_cast<float>(y.v[j]);
    }
    Volume out(in.shape, 0.f, in.spacing, in.origin, Modality::CT);
    out.data = blend == BlendMode::MEDIAN ? median_blend(grid, outputs)
                                          : mean_blend(grid, outputs);
    return out;
}

// Patch-wise segmentation: mean-blends per-class logits across overlapping
// windows, then takes the per-voxel argmax.
template <typename T>
LabelVolume segment_volume(nn::UNet<T>& model, const Volume& in, const Shape3& patch_size,
                           double tiling = 0.5) {
    const std::int64_t C = model.config().out_channels;
    PatchGrid grid = tile_volume(in.shape, patch_size, tiling);
    std::vector<std::vector<std::vector<float>>> per_class(
        static_cast<std::size_t>(C),
        std::vector<std::vector<float>>(grid.windows.size()));
    for (std::size_t i = 0; i < grid.windows.size(); ++i) {
        auto x = nn::tensor_from_patch<T>(extract_patch(in, grid.windows[i]), patch_size);
        auto y = model.infer(x);
        const std::int64_t n = y.spatial();
        for (std::int64_t c = 0; c < C; ++c) {
            auto& dst = per_class[static_cast<std::size_t>(c)][i];
            dst.resize(static_cast<std::size_t>(n));
            for (std::int64_t j = 0; j < n; ++j)
                dst[static_cast<std::size_t>(j)] = static_cast<float>(y.v[static_cast<std::size_t>(c * n + j)]);
        }
    }
    std::vector<std::vector<float>> blended(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c)
        blended[static_cast<std::size_t>(c)] = mean_blend(grid, per_class[static_cast<std::size_t>(c)]);
    LabelVolume out(in.shape, 0, in.spacing, in.origin);
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
        std::int64_t best = 0;
        float bv = blended[0][i];
        for (std::int64_t c = 1; c < C; ++c)
            if (blended[static_cast<std::size_t>(c)][i] > bv) {
                bv = blended[static_cast<std::size_t>(c)][i];
                best = c;
            }
        out.labels[i] = static_cast<std::int32_t>(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Segmentation training.

struct SegSample {
    Volume image;
    LabelVolume labels;
};

struct SegTrainOptions {
    int epochs = 30;
    double lr = 1e-3;
    Shape3 patch_size{16, 16, 16};
    int patches_per_case = 4;
    double fg_bias = 0.7;
    std::uint64_t seed = 0;
};

struct SegTrainResult {
    ModelCheckpoint checkpoint;
    double best_val_dice = 0.0;
    std::string loss_log; // CSV: epoch,loss,val_dice
};

namespace detail {

inline std::vector<std::int32_t> label_patch(const LabelVolume& lv, const Window& w) {
    std::vector<std::int32_t> out;
    out.reserve(static_cast<std::size_t>((w.end[0] - w.start[0]) * (w.end[1] - w.start[1]) *
                                         (w.end[2] - w.start[2])));
    for (std::int64_t z = w.start[0]; z < w.end[0]; ++z)
        for (std::int64_t y = w.start[1]; y < w.end[1]; ++y)
            for (std::int64_t x = w.start[2]; x < w.end[2]; ++x) out.push_back(lv.at(z, y, x));
    return out;
}

// Soft mean Dice over non-background classes present in either mask, used as
// the validation selection metric.
inline double mean_fg_dice(const LabelVolume& hyp, const LabelVolume& ref, std::int64_t n_classes) {
    double acc = 0;
    int k = 0;
    for (std::int64_t c = 1; c < n_classes; ++c) {
        std::int64_t na = 0, nb = 0, ni = 0;
        for (std::size_t i = 0; i < hyp.labels.size(); ++i) {
            na += hyp.labels[i] == c;
            nb += ref.labels[i] == c;
            ni += hyp.labels[i] == c && ref.labels[i] == c;
        }
        acc += (na + nb) == 0 ? 1.0 : 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
        ++k;
    }
    return k > 0 ? acc / k : 0.0;
}

} // namespace detail

template <typename T>
SegTrainResult train_segmentation(nn::UNet<T>& model, const std::vector<SegSample>& train,
                                  const std::vector<SegSample>& val,
                                  const SegTrainOptions& opts) {
    const std::int64_t C = model.config().out_channels;
    for (const auto& s : train)
        for (auto l : s.labels.labels)
            if (l < 0 || l >= C)
                throw Error(ErrorCode::SPEC_INVALID,
                            "dataset label " + std::to_string(l) + " exceeds out_channels " +
                                std::to_string(C));

    std::uint64_t data_h = 1469598103934665603ull;
    for (const auto& s : train) {
        data_h = hash_volume(data_h, s.image);
        data_h = hash_labels(data_h, s.labels);
    }

    nn::Adam<T> opt(opts.lr);
    std::ostringstream log;
    log << "epoch,loss,val_dice\n";

    std::vector<float> best_weights;
    model.save_weights(best_weights);
    double best_val = -1.0;

    auto validate = [&]() {
        if (val.empty()) return 0.0;
        double acc = 0;
        for (const auto& s : val) {
            LabelVolume hyp = segment_volume(model, s.image, opts.patch_size);
            acc += detail::mean_fg_dice(hyp, s.labels, C);
        }
        return acc / static_cast<double>(val.size());
    };

    if (opts.epochs == 0) best_val = validate();

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        double epoch_loss = 0;
        std::int64_t n_steps = 0;
        for (std::size_t ci = 0; ci < train.size(); ++ci) {
            const auto& s = train[ci];
            VolumePair pair{s.image, s.image, s.labels};
            auto windows = sample_training_patches(
                pair, opts.patch_size, static_cast<std::size_t>(opts.patches_per_case),
                opts.seed + 7919ull * static_cast<std::uint64_t>(epoch) + ci, opts.fg_bias);
            for (const auto& w : windows) {
                auto x = nn::tensor_from_patch<T>(extract_patch(s.image, w), opts.patch_size);
                auto target = detail::label_patch(s.labels, w);
                auto logits = model.forward(x);
                nn::Tensor<T> g;
                double loss = dice_ce_loss(logits, target, &g);
                if (!std::isfinite(loss))
                    throw Error(ErrorCode::DIVERGENCE,
                                "segmentation loss non-finite at epoch " + std::to_string(epoch) +
                                    " case " + std::to_string(ci));
                model.zero_grad();
                model.backward(g);
                opt.step(model.params());
                epoch_loss += loss;
                ++n_steps;
            }
        }
        double mean_loss = n_steps > 0 ? epoch_loss / static_cast<double>(n_steps) : 0.0;
        double vd = validate();
        log << epoch << "," << mean_loss << "," << vd << "\n";
        if (vd > best_val) {
            best_val = vd;
            model.save_weights(best_weights);
        }
    }

    model.load_weights(best_weights);
    SegTrainResult r;
    r.best_val_dice = std::max(best_val, 0.0);
    r.loss_log = log.str();
    r.checkpoint.weights = std::move(best_weights);
    r.checkpoint.fingerprint = "data:" + detail::hex64(data_h) + " seed:" +
                               std::to_string(opts.seed) + " epochs:" +
                               std::to_string(opts.epochs);
    return r;
}

// ---------------------------------------------------------------------------
// Patch discriminator (single-scale, 4 stride-2 conv levels + 1x1 head) for
// the optional adversarial / feature-matching composite.

template <typename T>
class PatchDiscriminator {
public:
    PatchDiscriminator() = default;

    PatchDiscriminator(std::int64_t in_channels, std::int64_t base, std::uint64_t seed) {
        Rng rng(seed, 0xd15c);
        std::int64_t cin = in_channels;
        std::int64_t cout = base;
        for (int l = 0; l < 4; ++l) {
            convs_[static_cast<std::size_t>(l)].init(cin, cout, 3, 2, 1, rng);
            cin = cout;
            cout *= 2;
        }
        head_.init(cin, 1, 1, 1, 0, rng);
    }

    std::vector<nn::Param<T>*> params() {
        std::vector<nn::Param<T>*> out;
        for (auto& c : convs_) {
            out.push_back(&c.weight);
            out.push_back(&c.bias);
        }
        out.push_back(&head_.weight);
        out.push_back(&head_.bias);
        return out;
    }

    void zero_grad() {
        for (auto* p : params()) p->zero_grad();
    }

    // Scores plus the post-activation feature list (one per level).
    std::pair<nn::Tensor<T>, std::vector<nn::Tensor<T>>> forward_with_feats(const nn::Tensor<T>& x) {
        std::vector<nn::Tensor<T>> feats;
        nn::Tensor<T> t = x;
        for (int l = 0; l < 4; ++l) {
            t = convs_[static_cast<std::size_t>(l)].forward(t, true);
            t = acts_[static_cast<std::size_t>(l)].forward(t, true);
            feats.push_back(t);
        }
        return {head_.forward(t, true), feats};
    }

    // Backprop from the score gradient and optional per-level feature-seed
    // gradients; accumulates parameter grads, returns d(loss)/d(input).
    nn::Tensor<T> backward(const nn::Tensor<T>& gscore,
                           const std::vector<nn::Tensor<T>>* feat_seeds = nullptr) {
        nn::Tensor<T> g = head_.backward(gscore, false);
        for (int l = 3; l >= 0; --l) {
            if (feat_seeds) {
                const auto& s = (*feat_seeds)[static_cast<std::size_t>(l)];
                for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += s.v[i];
            }
            g = acts_[static_cast<std::size_t>(l)].backward(g);
            g = convs_[static_cast<std::size_t>(l)].backward(g, false);
        }
        return g;
    }

private:
    std::array<nn::Conv3d<T>, 4> convs_;
    std::array<nn::LeakyReLU<T>, 4> acts_;
    nn::Conv3d<T> head_;
};

// ---------------------------------------------------------------------------
// Translation training (two-stage plan).

struct StagePlan {
    LossConfig loss;
    int epochs = 0;
    double lr = 1e-3;
};

struct TrainPlan {
    std::optional<StagePlan> stage1;
    StagePlan stage2;
    Shape3 patch_size{16, 16, 16};
    int batch_size = 1;
    int patches_per_case = 4;
    double fg_bias = 0.7;
    std::uint64_t seed = 0;

    void validate(int depth) const {
        stage2.loss.validate();
        if (stage1) stage1->loss.validate();
        const std::int64_t f = std::int64_t{1} << (depth - 1);
        for (auto p : patch_size)
            if (p % f != 0)
                throw Error(ErrorCode::CONFIG_INVALID,
                            "patch_size must be divisible by " + std::to_string(f));
    }
};

struct SynthTrainResult {
    ModelCheckpoint checkpoint;
    double best_val_loss = 0.0;
    std::string loss_log; // CSV: epoch,stage,l1,afp,adv,fm,total,val_total
    // Stage-1 weights, kept so two-stage runs can be compared against their
    // own pretraining checkpoint.
    std::optional<std::vector<float>> stage1_weights;
};

template <typename T>
SynthTrainResult train_translation(nn::UNet<T>& model, const std::vector<VolumePair>& train,
                                   const std::vector<VolumePair>& val, const TrainPlan& plan,
                                   nn::UNet<T>* extractor,
                                   const nn::FeatureTapConfig& taps = {}) {
    plan.validate(model.config().depth);
    const bool any_afp = plan.stage2.loss.w_afp > 0 ||
                         (plan.stage1 && plan.stage1->loss.w_afp > 0);
    if (any_afp && extractor == nullptr)
        throw Error(ErrorCode::CONFIG_CONFLICT, "w_afp > 0 requires a feature extractor");
    if (any_afp && !extractor->frozen())
        throw Error(ErrorCode::EXTRACTOR_NOT_FROZEN, "train_translation extractor");
    const bool any_gan = plan.stage2.loss.w_adv > 0 || plan.stage2.loss.w_fm > 0 ||
                         (plan.stage1 && (plan.stage1->loss.w_adv > 0 || plan.stage1->loss.w_fm > 0));

    std::uint64_t data_h = 1469598103934665603ull;
    for (const auto& p : train) {
        data_h = hash_volume(data_h, p.source);
        data_h = hash_volume(data_h, p.target);
    }

    std::optional<PatchDiscriminator<T>> disc;
    std::optional<nn::Adam<T>> disc_opt;
    if (any_gan) {
        disc.emplace(1, 8, plan.seed ^ 0x9e3779b97f4a7c15ull);
        disc_opt.emplace(2e-4);
    }

    std::ostringstream log;
    log << "epoch,stage,l1,afp,adv,fm,total,val_total\n";

    std::vector<float> best_weights;
    model.save_weights(best_weights);
    double best_val = std::numeric_limits<double>::infinity();
    SynthTrainResult result;

    auto val_loss = [&](const LossConfig& lc) {
        if (val.empty()) return 0.0;
        double acc = 0;
        for (const auto& p : val) {
            // deterministic center crop
            Window w;
            for (int a = 0; a < 3; ++a) {
                w.start[a] = (p.source.shape[a] - plan.patch_size[a]) / 2;
                w.end[a] = w.start[a] + plan.patch_size[a];
            }
            auto x = nn::tensor_from_patch<T>(extract_patch(p.source, w), plan.patch_size);
            auto y = nn::tensor_from_patch<T>(extract_patch(p.target, w), plan.patch_size);
            auto out = model.infer(x);
            double total = 0;
            if (lc.w_l1 > 0) total += lc.w_l1 * l1_loss(out, y);
            if (lc.w_afp > 0) total += lc.w_afp * afp_loss(out, y, *extractor, taps, lc);
            acc += total;
        }
        return acc / static_cast<double>(val.size());
    };

    int global_epoch = 0;
    auto run_stage = [&](const StagePlan& sp, int stage_id) {
        nn::Adam<T> opt(sp.lr);
        for (int e = 0; e < sp.epochs; ++e, ++global_epoch) {
            double c_l1 = 0, c_afp = 0, c_adv = 0, c_fm = 0, c_total = 0;
            std::int64_t n_steps = 0;
            for (std::size_t ci = 0; ci < train.size(); ++ci) {
                const auto& p = train[ci];
                auto windows = sample_training_patches(
                    p, plan.patch_size, static_cast<std::size_t>(plan.patches_per_case),
                    plan.seed + 104729ull * static_cast<std::uint64_t>(global_epoch) + ci,
                    plan.fg_bias);
                for (const auto& w : windows) {
                    auto x = nn::tensor_from_patch<T>(extract_patch(p.source, w), plan.patch_size);
                    auto y = nn::tensor_from_patch<T>(extract_patch(p.target, w), plan.patch_size);
                    auto out = model.forward(x);

                    nn::Tensor<T> g_total(out.c, out.d, out.h, out.w);
                    double l1 = 0, afp = 0, adv = 0, fm = 0;
                    if (sp.loss.w_l1 > 0) {
                        nn::Tensor<T> g;
                        l1 = l1_loss(out, y, &g);
                        for (std::size_t i = 0; i < g.v.size(); ++i)
                            g_total.v[i] += static_cast<T>(sp.loss.w_l1) * g.v[i];
                    }
                    if (sp.loss.w_afp > 0) {
                        nn::Tensor<T> g;
                        afp = afp_loss(out, y, *extractor, taps, sp.loss, &g);
                        for (std::size_t i = 0; i < g.v.size(); ++i)
                            g_total.v[i] += static_cast<T>(sp.loss.w_afp) * g.v[i];
                    }
                    if (any_gan && (sp.loss.w_adv > 0 || sp.loss.w_fm > 0)) {
                        // discriminator update on real target vs detached fake
                        auto [s_real, f_real] = disc->forward_with_feats(y);
                        auto [s_fake, f_fake] = disc->forward_with_feats(out);
                        (void)f_real;
                        (void)f_fake;
                        nn::Tensor<T> gdr, gdf;
                        auto h = hinge_adv_losses(s_real, s_fake, &gdr, &gdf,
                                                  static_cast<nn::Tensor<T>*>(nullptr));
                        (void)h;
                        // real-branch grads must run before the caches are
                        // overwritten by the fake branch below
                        disc->zero_grad();
                        auto [s_fake2, f_fake2] = disc->forward_with_feats(out);
                        (void)s_fake2;
                        disc->backward(gdf);
                        auto [s_real2, f_real2] = disc->forward_with_feats(y);
                        (void)s_real2;
                        disc->backward(gdr);
                        disc_opt->step(disc->params());

                        // generator side: re-run D on the updated weights
                        auto [s_real3, f_real3] = disc->forward_with_feats(y);
                        auto [s_fake3, f_fake3] = disc->forward_with_feats(out);
                        nn::Tensor<T> ggf;
                        auto hg = hinge_adv_losses(s_real3, s_fake3, static_cast<nn::Tensor<T>*>(nullptr),
                                                   static_cast<nn::Tensor<T>*>(nullptr), &ggf);
                        adv = hg.loss_g;
                        std::vector<nn::Tensor<T>> gfm;
                        fm = feature_matching_loss(f_real3, f_fake3, &gfm);
                        for (auto& t : ggf.v) t = static_cast<T>(sp.loss.w_adv) * t;
                        for (auto& layer : gfm)
                            for (auto& t : layer.v) t = static_cast<T>(sp.loss.w_fm) * t;
                        disc->zero_grad();
                        nn::Tensor<T> g_from_d =
                            disc->backward(ggf, sp.loss.w_fm > 0 ? &gfm : nullptr);
                        for (std::size_t i = 0; i < g_total.v.size(); ++i)
                            g_total.v[i] += g_from_d.v[i];
                        disc->zero_grad(); // D grads from the G pass are discarded
                    }

                    double total = sp.loss.w_l1 * l1 + sp.loss.w_afp * afp +
                                   sp.loss.w_adv * adv + sp.loss.w_fm * fm;
                    if (!std::isfinite(total))
                        throw Error(ErrorCode::DIVERGENCE,
                                    "translation loss non-finite at epoch " +
                                        std::to_string(global_epoch) + " case " +
                                        std::to_string(ci));
                    model.zero_grad();
                    model.backward(g_total);
                    opt.step(model.params());

                    c_l1 += l1;
                    c_afp += afp;
                    c_adv += adv;
                    c_fm += fm;
                    c_total += total;
                    ++n_steps;
                }
            }
            const double inv = n_steps > 0 ? 1.0 / static_cast<double>(n_steps) : 0.0;
            double vl = val_loss(sp.loss);
            log << global_epoch << "," << stage_id << "," << c_l1 * inv << "," << c_afp * inv
                << "," << c_adv * inv << "," << c_fm * inv << "," << c_total * inv << "," << vl
                << "\n";
            if (vl < best_val) {
                best_val = vl;
                model.save_weights(best_weights);
            }
        }
    };

    if (plan.stage1 && plan.stage1->epochs > 0) {
        run_stage(*plan.stage1, 1);
        std::vector<float> w;
        model.save_weights(w);
        result.stage1_weights = std::move(w);
        // stage 2 selects afresh against its own objective
        best_val = std::numeric_limits<double>::infinity();
        model.save_weights(best_weights);
    }
    run_stage(plan.stage2, 2);

    model.load_weights(best_weights);
    result.best_val_loss = std::isfinite(best_val) ? best_val : 0.0;
    result.loss_log = log.str();
    result.checkpoint.weights = std::move(best_weights);
    result.checkpoint.fingerprint = "data:" + detail::hex64(data_h) + " seed:" +
                                    std::to_string(plan.seed) + " epochs:" +
                                    std::to_string((plan.stage1 ? plan.stage1->epochs : 0) +
                                                   plan.stage2.epochs);
    return result;
}

} // namespace afp

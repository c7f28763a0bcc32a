// Compact 3D encoder-decoder with skip connections, post-ReLU feature taps,
// and a decoder-mode switch (transposed conv vs upsample+conv). One class
// serves both the segmentation backbone and the translator.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "afp/error.hpp"
#include "afp/rng.hpp"
#include "afp/nn/layers.hpp"
#include "afp/nn/tensor.hpp"

namespace afp::nn {

enum class NormKind { INSTANCE, NONE };
enum class DecoderMode { TRANSPOSED, UPSAMPLE_CONV };

struct UNetConfig {
    std::int64_t in_channels = 1;
    std::int64_t base_channels = 8;
    int depth = 3;               // encoder levels
    double channel_growth = 2.0;
    NormKind norm = NormKind::INSTANCE;
    std::int64_t out_channels = 2; // labels for the segmenter, 1 for the translator
    int convs_per_block = 2;
    DecoderMode decoder_mode = DecoderMode::TRANSPOSED;

    void validate() const {
        if (depth < 2) throw Error(ErrorCode::CONFIG_INVALID, "depth >= 2 required");
        if (base_channels < 4) throw Error(ErrorCode::CONFIG_INVALID, "base_channels >= 4 required");
        if (out_channels < 1) throw Error(ErrorCode::CONFIG_INVALID, "out_channels >= 1 required");
        if (convs_per_block < 1) throw Error(ErrorCode::CONFIG_INVALID, "convs_per_block >= 1");
        if (!(channel_growth >= 1.0)) throw Error(ErrorCode::CONFIG_INVALID, "channel_growth >= 1");
    }

    std::int64_t channels_at(int level) const {
        return std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::llround(
                   static_cast<double>(base_channels) * std::pow(channel_growth, level))));
    }
};

// Which post-ReLU block outputs feed the AFP loss. Valid ids: "enc0".."encN",
// "dec0".."decN" (dec0 = full resolution); "prefinal" duplicates the map
// entering the final 1x1 convolution.
struct FeatureTapConfig {
    std::vector<std::string> tap_ids;
    bool include_prefinal = true;

    // One tap per block plus the pre-final map (dec0 itself is covered by
    // the prefinal entry, so it is not listed twice).
    static FeatureTapConfig all_blocks(int depth) {
        FeatureTapConfig c;
        for (int l = 0; l < depth; ++l) c.tap_ids.push_back("enc" + std::to_string(l));
        for (int l = depth - 2; l > 0; --l) c.tap_ids.push_back("dec" + std::to_string(l));
        c.include_prefinal = true;
        return c;
    }
};

template <typename T>
class UNet {
public:
    using Tn = Tensor<T>;

    UNet() = default;

    UNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng rng(seed, 0x0e7);
        const int d = cfg.depth;
        enc_.resize(static_cast<std::size_t>(d));
        for (int l = 0; l < d; ++l) {
            std::int64_t cin = (l == 0) ? cfg.in_channels : cfg.channels_at(l - 1);
            std::int64_t cch = cfg.channels_at(l);
            for (int u = 0; u < cfg.convs_per_block; ++u) {
                ConvUnit unit;
                std::int64_t stride = (l > 0 && u == 0) ? 2 : 1;
                unit.conv.init(u == 0 ? cin : cch, cch, 3, stride, 1, rng);
                unit.use_norm = (cfg.norm == NormKind::INSTANCE);
                if (unit.use_norm) unit.norm.init(cch);
                enc_[static_cast<std::size_t>(l)].units.push_back(std::move(unit));
            }
        }
        up_t_.resize(static_cast<std::size_t>(d - 1));
        up_conv_.resize(static_cast<std::size_t>(d - 1));
        dec_.resize(static_cast<std::size_t>(d - 1));
        for (int l = d - 2; l >= 0; --l) {
            std::int64_t chi = cfg.channels_at(l + 1);
            std::int64_t clo = cfg.channels_at(l);
            if (cfg.decoder_mode == DecoderMode::TRANSPOSED)
                up_t_[static_cast<std::size_t>(l)].init(chi, clo, rng);
            else
                up_conv_[static_cast<std::size_t>(l)].init(chi, clo, 3, 1, 1, rng);
            for (int u = 0; u < cfg.convs_per_block; ++u) {
                ConvUnit unit;
                unit.conv.init(u == 0 ? 2 * clo : clo, clo, 3, 1, 1, rng);
                unit.use_norm = (cfg.norm == NormKind::INSTANCE);
                if (unit.use_norm) unit.norm.init(clo);
                dec_[static_cast<std::size_t>(l)].units.push_back(std::move(unit));
            }
        }
        final_.init(cfg.channels_at(0), cfg.out_channels, 1, 1, 0, rng);
    }

    const UNetConfig& config() const { return cfg_; }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto* p : const_cast<UNet*>(this)->params()) n += p->value.size();
        return n;
    }

    // Parameters in fixed order (encoder, decoder, final) for the optimizer
    // and checkpoint serialization.
    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        auto add_unit = [&](ConvUnit& u) {
            out.push_back(&u.conv.weight);
            out.push_back(&u.conv.bias);
            if (u.use_norm) {
                out.push_back(&u.norm.gamma);
                out.push_back(&u.norm.beta);
            }
        };
        for (auto& b : enc_)
            for (auto& u : b.units) add_unit(u);
        for (int l = cfg_.depth - 2; l >= 0; --l) {
            if (cfg_.decoder_mode == DecoderMode::TRANSPOSED) {
                out.push_back(&up_t_[static_cast<std::size_t>(l)].weight);
                out.push_back(&up_t_[static_cast<std::size_t>(l)].bias);
            } else {
                out.push_back(&up_conv_[static_cast<std::size_t>(l)].weight);
                out.push_back(&up_conv_[static_cast<std::size_t>(l)].bias);
            }
            for (auto& u : dec_[static_cast<std::size_t>(l)].units) add_unit(u);
        }
        out.push_back(&final_.weight);
        out.push_back(&final_.bias);
        return out;
    }

    void zero_grad() {
        for (auto* p : params()) p->zero_grad();
    }

    void check_input(const Tn& x) const {
        std::int64_t div = std::int64_t(1) << (cfg_.depth - 1);
        if (x.c != cfg_.in_channels)
            throw Error(ErrorCode::SHAPE_INCOMPATIBLE, "input channel count");
        for (std::int64_t dim : {x.d, x.h, x.w})
            if (dim < div || dim % div != 0)
                throw Error(ErrorCode::SHAPE_INCOMPATIBLE,
                            "spatial dims must be divisible by " + std::to_string(div));
    }

    Tn forward(const Tn& x) { return forward_impl(x, true); }

    // Inference-only forward; no caches are kept so backward is unavailable.
    Tn infer(const Tn& x) { return forward_impl(x, false); }

    // Resolves tap ids to internal block indices; depth order, prefinal last.
    std::vector<int> resolve_taps(const FeatureTapConfig& taps) const {
        if (taps.tap_ids.empty() && !taps.include_prefinal)
            throw Error(ErrorCode::CONFIG_INVALID, "tap list empty");
        std::vector<int> out;
        for (const auto& id : taps.tap_ids) out.push_back(block_index(id));
        if (taps.include_prefinal) out.push_back(prefinal_index());
        return out;
    }

    // Forward keeping caches, returning the tapped post-ReLU maps in the
    // order given by resolve_taps.
    std::pair<Tn, std::vector<Tn>> forward_with_taps(const Tn& x, const FeatureTapConfig& taps) {
        auto ids = resolve_taps(taps);
        Tn out = forward_impl(x, true);
        std::vector<Tn> feats;
        feats.reserve(ids.size());
        for (int bi : ids) feats.push_back(block_output(bi));
        return {std::move(out), std::move(feats)};
    }

    // Backprop from the final output; returns grad wrt input. Parameter
    // gradients accumulate unless the model is frozen.
    Tn backward(const Tn& gout) { return backward_impl(&gout, {}); }

    // Backprop from per-tap gradient seeds (no gradient at the final
    // output). Used by the AFP loss.
    Tn backward_from_taps(const std::vector<int>& tap_indices, const std::vector<Tn>& seeds) {
        if (tap_indices.size() != seeds.size())
            throw Error(ErrorCode::LENGTH_MISMATCH, "tap seeds");
        std::map<int, const Tn*> m;
        std::vector<Tn> merged;
        merged.reserve(seeds.size());
        // Merge duplicate taps (e.g. dec0 + prefinal) by summing seeds.
        std::map<int, Tn> acc;
        const int dec0_index = cfg_.depth + (cfg_.depth - 2);
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            int bi = tap_indices[i] == prefinal_index() ? dec0_index : tap_indices[i];
            auto it = acc.find(bi);
            if (it == acc.end()) {
                acc.emplace(bi, seeds[i]);
            } else {
                for (std::size_t j = 0; j < it->second.v.size(); ++j)
                    it->second.v[j] += seeds[i].v[j];
            }
        }
        return backward_impl(nullptr, acc);
    }

    void save_weights(std::vector<float>& out) {
        out.clear();
        for (auto* p : params())
            for (T x : p->value) out.push_back(static_cast<float>(x));
    }

    void load_weights(const std::vector<float>& in) {
        std::size_t off = 0;
        for (auto* p : params()) {
            if (off + p->value.size() > in.size())
                throw Error(ErrorCode::SHAPE_INCOMPATIBLE, "weight blob too short");
            for (auto& x : p->value) x = static_cast<T>(in[off++]);
        }
        if (off != in.size())
            throw Error(ErrorCode::SHAPE_INCOMPATIBLE, "weight blob size mismatch");
    }

private:
    struct ConvUnit {
        Conv3d<T> conv;
        InstanceNorm<T> norm;
        bool use_norm = false;
        ReLU<T> relu;

        Tensor<T> forward(const Tensor<T>& x, bool cache) {
            Tensor<T> t = conv.forward(x, cache);
            if (use_norm) t = norm.forward(t, cache);
            return relu.forward(t, cache);
        }
        Tensor<T> backward(const Tensor<T>& g, bool frozen) {
            Tensor<T> t = relu.backward(g);
            if (use_norm) t = norm.backward(t, frozen);
            return conv.backward(t, frozen);
        }
    };
    struct Block {
        std::vector<ConvUnit> units;
        Tensor<T> output; // post-ReLU, cached for taps/skips

        Tensor<T> forward(const Tensor<T>& x, bool cache) {
            Tensor<T> t = units.front().forward(x, cache);
            for (std::size_t i = 1; i < units.size(); ++i) t = units[i].forward(t, cache);
            if (cache) output = t;
            return t;
        }
        Tensor<T> backward(const Tensor<T>& g, bool frozen) {
            Tensor<T> t = g;
            for (std::size_t i = units.size(); i-- > 0;) t = units[i].backward(t, frozen);
            return t;
        }
    };

    int block_index(const std::string& id) const {
        const int d = cfg_.depth;
        if (id.rfind("enc", 0) == 0) {
            int l = std::stoi(id.substr(3));
            if (l < 0 || l >= d) throw Error(ErrorCode::UNKNOWN_TAP_ID, id);
            return l;
        }
        if (id.rfind("dec", 0) == 0) {
            int l = std::stoi(id.substr(3));
            if (l < 0 || l >= d - 1) throw Error(ErrorCode::UNKNOWN_TAP_ID, id);
            // decoder blocks indexed d .. 2d-2 in forward order (level d-2 .. 0)
            return d + (d - 2 - l);
        }
        if (id == "prefinal") return prefinal_index();
        throw Error(ErrorCode::UNKNOWN_TAP_ID, id);
    }
    int prefinal_index() const { return 2 * cfg_.depth - 1; }

    Tn block_output(int bi) const {
        const int d = cfg_.depth;
        if (bi < d) return enc_[static_cast<std::size_t>(bi)].output;
        if (bi == prefinal_index()) return dec_[0].output;
        int level = d - 2 - (bi - d);
        return dec_[static_cast<std::size_t>(level)].output;
    }

    Tn forward_impl(const Tn& x, bool cache) {
        check_input(x);
        const int d = cfg_.depth;
        std::vector<Tn> skips(static_cast<std::size_t>(d));
        Tn t = enc_[0].forward(x, cache);
        skips[0] = t;
        for (int l = 1; l < d; ++l) {
            t = enc_[static_cast<std::size_t>(l)].forward(t, cache);
            skips[static_cast<std::size_t>(l)] = t;
        }
        for (int l = d - 2; l >= 0; --l) {
            Tn u;
            if (cfg_.decoder_mode == DecoderMode::TRANSPOSED)
                u = up_t_[static_cast<std::size_t>(l)].forward(t, cache);
            else
                u = up_conv_[static_cast<std::size_t>(l)].forward(upsample_.forward(t), cache);
            Tn cat = concat_channels(u, skips[static_cast<std::size_t>(l)]);
            t = dec_[static_cast<std::size_t>(l)].forward(cat, cache);
        }
        return final_.forward(t, cache);
    }

    Tn backward_impl(const Tn* gout_final, const std::map<int, Tn>& seeds) {
        const int d = cfg_.depth;
        auto seed_for = [&](int bi) -> const Tn* {
            auto it = seeds.find(bi);
            return it == seeds.end() ? nullptr : &it->second;
        };
        auto add = [](Tn& a, const Tn& b) {
            for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
        };

        // Gradient at dec0's output.
        Tn g;
        if (gout_final) {
            g = final_.backward(*gout_final, frozen_);
        } else {
            const auto& ref = dec_[0].output;
            g = Tn(ref.c, ref.d, ref.h, ref.w);
        }
        if (const Tn* s = seed_for(d + (d - 2))) add(g, *s); // dec0 forward index

        std::vector<Tn> skip_grad(static_cast<std::size_t>(d));
        for (int l = 0; l <= d - 2; ++l) {
            // g = grad at dec_[l] output
            Tn gcat = dec_[static_cast<std::size_t>(l)].backward(g, frozen_);
            const Tn& skip = enc_[static_cast<std::size_t>(l)].output;
            Tn gu(gcat.c - skip.c, gcat.d, gcat.h, gcat.w);
            Tn gskip(skip.c, skip.d, skip.h, skip.w);
            split_channels(gcat, gu, gskip);
            if (skip_grad[static_cast<std::size_t>(l)].v.empty())
                skip_grad[static_cast<std::size_t>(l)] = std::move(gskip);
            else
                add(skip_grad[static_cast<std::size_t>(l)], gskip);
            Tn gt;
            if (cfg_.decoder_mode == DecoderMode::TRANSPOSED) {
                gt = up_t_[static_cast<std::size_t>(l)].backward(gu, frozen_);
            } else {
                gt = upsample_.backward(up_conv_[static_cast<std::size_t>(l)].backward(gu, frozen_));
            }
            if (l == d - 2) {
                skip_grad[static_cast<std::size_t>(d - 1)] = std::move(gt);
            } else {
                g = std::move(gt);
                int next_forward_index = d + (d - 2 - (l + 1));
                if (const Tn* s = seed_for(next_forward_index)) add(g, *s);
            }
        }
        Tn gx;
        for (int l = d - 1; l >= 0; --l) {
            Tn ge = std::move(skip_grad[static_cast<std::size_t>(l)]);
            if (const Tn* s = seed_for(l)) add(ge, *s);
            Tn gin = enc_[static_cast<std::size_t>(l)].backward(ge, frozen_);
            if (l > 0)
                add(skip_grad[static_cast<std::size_t>(l - 1)], gin);
            else
                gx = std::move(gin);
        }
        return gx;
    }

    UNetConfig cfg_;
    bool frozen_ = false;
    std::vector<Block> enc_;
    std::vector<Block> dec_;
    std::vector<ConvTranspose3d<T>> up_t_;
    std::vector<Conv3d<T>> up_conv_;
    UpsampleNearest2<T> upsample_;
    Conv3d<T> final_;
};

} // namespace afp::nn

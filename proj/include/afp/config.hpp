// JSON (de)serialization for every user-facing config type, plus the
// top-level run configuration consumed by the CLI.
#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "afp/error.hpp"
#include "afp/losses.hpp"
#include "afp/nn/unet.hpp"
#include "afp/phantom.hpp"
#include "afp/preprocess.hpp"
#include "afp/train.hpp"

namespace afp {

using nlohmann::json;

namespace detail {

template <typename E>
E enum_from_string(const std::string& s, std::initializer_list<std::pair<const char*, E>> table,
                   const char* what) {
    for (const auto& [name, val] : table)
        if (s == name) return val;
    throw Error(ErrorCode::CONFIG_INVALID, std::string(what) + ": unknown value '" + s + "'");
}

} // namespace detail

inline void to_json(json& j, const Interpolation& v) {
    j = v == Interpolation::LINEAR ? "linear" : "bspline3";
}
inline void from_json(const json& j, Interpolation& v) {
    v = detail::enum_from_string<Interpolation>(
        j.get<std::string>(),
        {{"linear", Interpolation::LINEAR}, {"bspline3", Interpolation::BSPLINE3}},
        "interpolation");
}

inline void to_json(json& j, const PreprocessConfig& c) {
    j = json{{"target_spacing", c.target_spacing},
             {"mr_interpolation", c.mr_interpolation},
             {"ct_clip_low", c.ct_clip_low},
             {"ct_clip_high", c.ct_clip_high},
             {"foreground_threshold_pct", c.foreground_threshold_pct}};
}
inline void from_json(const json& j, PreprocessConfig& c) {
    c = PreprocessConfig{};
    if (j.contains("target_spacing")) j.at("target_spacing").get_to(c.target_spacing);
    if (j.contains("mr_interpolation")) j.at("mr_interpolation").get_to(c.mr_interpolation);
    if (j.contains("ct_clip_low")) j.at("ct_clip_low").get_to(c.ct_clip_low);
    if (j.contains("ct_clip_high")) j.at("ct_clip_high").get_to(c.ct_clip_high);
    if (j.contains("foreground_threshold_pct"))
        j.at("foreground_threshold_pct").get_to(c.foreground_threshold_pct);
}

inline void to_json(json& j, const ClassIntensity& c) {
    j = json{{"mr_mean", c.mr_mean}, {"ct_mean", c.ct_mean}};
}
inline void from_json(const json& j, ClassIntensity& c) {
    j.at("mr_mean").get_to(c.mr_mean);
    j.at("ct_mean").get_to(c.ct_mean);
}

inline void to_json(json& j, const PhantomSpec& s) {
    j = json{{"size", s.size},
             {"spacing", s.spacing},
             {"seed", s.seed},
             {"tree_depth", s.tree_depth},
             {"tube_radius_min", s.tube_radius_min},
             {"tube_radius_max", s.tube_radius_max},
             {"n_blobs", s.n_blobs},
             {"n_shafts", s.n_shafts},
             {"noise_sigma_mr", s.noise_sigma_mr},
             {"noise_sigma_ct", s.noise_sigma_ct},
             {"intensity_table", s.intensity_table}};
}
inline void from_json(const json& j, PhantomSpec& s) {
    s = PhantomSpec{};
    if (j.contains("size")) j.at("size").get_to(s.size);
    if (j.contains("spacing")) j.at("spacing").get_to(s.spacing);
    if (j.contains("seed")) j.at("seed").get_to(s.seed);
    if (j.contains("tree_depth")) j.at("tree_depth").get_to(s.tree_depth);
    if (j.contains("tube_radius_min")) j.at("tube_radius_min").get_to(s.tube_radius_min);
    if (j.contains("tube_radius_max")) j.at("tube_radius_max").get_to(s.tube_radius_max);
    if (j.contains("n_blobs")) j.at("n_blobs").get_to(s.n_blobs);
    if (j.contains("n_shafts")) j.at("n_shafts").get_to(s.n_shafts);
    if (j.contains("noise_sigma_mr")) j.at("noise_sigma_mr").get_to(s.noise_sigma_mr);
    if (j.contains("noise_sigma_ct")) j.at("noise_sigma_ct").get_to(s.noise_sigma_ct);
    if (j.contains("intensity_table")) j.at("intensity_table").get_to(s.intensity_table);
}

namespace nn {

inline void to_json(json& j, const NormKind& v) {
    j = v == NormKind::INSTANCE ? "instance" : "none";
}
inline void from_json(const json& j, NormKind& v) {
    v = afp::detail::enum_from_string<NormKind>(
        j.get<std::string>(), {{"instance", NormKind::INSTANCE}, {"none", NormKind::NONE}},
        "norm");
}

inline void to_json(json& j, const DecoderMode& v) {
    j = v == DecoderMode::TRANSPOSED ? "transposed" : "upsample_conv";
}
inline void from_json(const json& j, DecoderMode& v) {
    v = afp::detail::enum_from_string<DecoderMode>(
        j.get<std::string>(),
        {{"transposed", DecoderMode::TRANSPOSED}, {"upsample_conv", DecoderMode::UPSAMPLE_CONV}},
        "decoder_mode");
}

inline void to_json(json& j, const UNetConfig& c) {
    j = json{{"in_channels", c.in_channels},
             {"base_channels", c.base_channels},
             {"depth", c.depth},
             {"channel_growth", c.channel_growth},
             {"norm", c.norm},
             {"out_channels", c.out_channels},
             {"convs_per_block", c.convs_per_block},
             {"decoder_mode", c.decoder_mode}};
}
inline void from_json(const json& j, UNetConfig& c) {
    c = UNetConfig{};
    if (j.contains("in_channels")) j.at("in_channels").get_to(c.in_channels);
    if (j.contains("base_channels")) j.at("base_channels").get_to(c.base_channels);
    if (j.contains("depth")) j.at("depth").get_to(c.depth);
    if (j.contains("channel_growth")) j.at("channel_growth").get_to(c.channel_growth);
    if (j.contains("norm")) j.at("norm").get_to(c.norm);
    if (j.contains("out_channels")) j.at("out_channels").get_to(c.out_channels);
    if (j.contains("convs_per_block")) j.at("convs_per_block").get_to(c.convs_per_block);
    if (j.contains("decoder_mode")) j.at("decoder_mode").get_to(c.decoder_mode);
}

inline void to_json(json& j, const FeatureTapConfig& c) {
    j = json{{"tap_ids", c.tap_ids}, {"include_prefinal", c.include_prefinal}};
}
inline void from_json(const json& j, FeatureTapConfig& c) {
    c = FeatureTapConfig{};
    if (j.contains("tap_ids")) j.at("tap_ids").get_to(c.tap_ids);
    if (j.contains("include_prefinal")) j.at("include_prefinal").get_to(c.include_prefinal);
}

} // namespace nn

inline void to_json(json& j, const AfpReduction& v) {
    j = v == AfpReduction::MEAN_PER_LAYER ? "mean_per_layer" : "sum_per_layer";
}
inline void from_json(const json& j, AfpReduction& v) {
    v = detail::enum_from_string<AfpReduction>(j.get<std::string>(),
                                               {{"mean_per_layer", AfpReduction::MEAN_PER_LAYER},
                                                {"sum_per_layer", AfpReduction::SUM_PER_LAYER}},
                                               "afp_reduction");
}

inline void to_json(json& j, const LossConfig& c) {
    j = json{{"w_l1", c.w_l1},
             {"w_afp", c.w_afp},
             {"w_adv", c.w_adv},
             {"w_fm", c.w_fm},
             {"afp_reduction", c.afp_reduction}};
    if (c.afp_layer_weights) j["afp_layer_weights"] = *c.afp_layer_weights;
}
inline void from_json(const json& j, LossConfig& c) {
    c = LossConfig{};
    if (j.contains("w_l1")) j.at("w_l1").get_to(c.w_l1);
    if (j.contains("w_afp")) j.at("w_afp").get_to(c.w_afp);
    if (j.contains("w_adv")) j.at("w_adv").get_to(c.w_adv);
    if (j.contains("w_fm")) j.at("w_fm").get_to(c.w_fm);
    if (j.contains("afp_reduction")) j.at("afp_reduction").get_to(c.afp_reduction);
    if (j.contains("afp_layer_weights"))
        c.afp_layer_weights = j.at("afp_layer_weights").get<std::vector<double>>();
}

inline void to_json(json& j, const StagePlan& s) {
    j = json{{"loss", s.loss}, {"epochs", s.epochs}, {"lr", s.lr}};
}
inline void from_json(const json& j, StagePlan& s) {
    s = StagePlan{};
    if (j.contains("loss")) j.at("loss").get_to(s.loss);
    if (j.contains("epochs")) j.at("epochs").get_to(s.epochs);
    if (j.contains("lr")) j.at("lr").get_to(s.lr);
}

inline void to_json(json& j, const TrainPlan& p) {
    j = json{{"stage2", p.stage2},
             {"patch_size", p.patch_size},
             {"batch_size", p.batch_size},
             {"patches_per_case", p.patches_per_case},
             {"fg_bias", p.fg_bias},
             {"seed", p.seed}};
    if (p.stage1) j["stage1"] = *p.stage1;
}
inline void from_json(const json& j, TrainPlan& p) {
    p = TrainPlan{};
    if (j.contains("stage1")) p.stage1 = j.at("stage1").get<StagePlan>();
    if (j.contains("stage2")) j.at("stage2").get_to(p.stage2);
    if (j.contains("patch_size")) j.at("patch_size").get_to(p.patch_size);
    if (j.contains("batch_size")) j.at("batch_size").get_to(p.batch_size);
    if (j.contains("patches_per_case")) j.at("patches_per_case").get_to(p.patches_per_case);
    if (j.contains("fg_bias")) j.at("fg_bias").get_to(p.fg_bias);
    if (j.contains("seed")) j.at("seed").get_to(p.seed);
}

inline void to_json(json& j, const SegTrainOptions& o) {
    j = json{{"epochs", o.epochs},
             {"lr", o.lr},
             {"patch_size", o.patch_size},
             {"patches_per_case", o.patches_per_case},
             {"fg_bias", o.fg_bias},
             {"seed", o.seed}};
}
inline void from_json(const json& j, SegTrainOptions& o) {
    o = SegTrainOptions{};
    if (j.contains("epochs")) j.at("epochs").get_to(o.epochs);
    if (j.contains("lr")) j.at("lr").get_to(o.lr);
    if (j.contains("patch_size")) j.at("patch_size").get_to(o.patch_size);
    if (j.contains("patches_per_case")) j.at("patches_per_case").get_to(o.patches_per_case);
    if (j.contains("fg_bias")) j.at("fg_bias").get_to(o.fg_bias);
    if (j.contains("seed")) j.at("seed").get_to(o.seed);
}

// Top-level run configuration for the CLI.
struct RunConfig {
    std::string data_dir = "data";
    std::string out_dir = "out";
    int n_phantoms = 25;
    std::array<double, 3> split_fractions{0.8, 0.0, 0.2};
    PreprocessConfig preprocess;
    PhantomSpec phantom;
    nn::UNetConfig segmenter;       // out_channels = label count
    nn::UNetConfig translator;      // out_channels = 1
    nn::FeatureTapConfig taps = nn::FeatureTapConfig::all_blocks(2);
    SegTrainOptions seg_train;
    TrainPlan synth_train;
    double tolerance_mm = 2.0;
    std::vector<std::int32_t> eval_labels{1, 2, 3};
    double tiling = 0.5;
    std::uint64_t seed = 0;

    RunConfig() {
        segmenter.depth = 2;
        segmenter.out_channels = 4;
        translator.depth = 2;
        translator.out_channels = 1;
    }
};

inline void to_json(json& j, const RunConfig& c) {
    j = json{{"data_dir", c.data_dir},
             {"out_dir", c.out_dir},
             {"n_phantoms", c.n_phantoms},
             {"split_fractions", c.split_fractions},
             {"preprocess", c.preprocess},
             {"phantom", c.phantom},
             {"segmenter", c.segmenter},
             {"translator", c.translator},
             {"taps", c.taps},
             {"seg_train", c.seg_train},
             {"synth_train", c.synth_train},
             {"tolerance_mm", c.tolerance_mm},
             {"eval_labels", c.eval_labels},
             {"tiling", c.tiling},
             {"seed", c.seed}};
}
inline void from_json(const json& j, RunConfig& c) {
    c = RunConfig{};
    if (j.contains("data_dir")) j.at("data_dir").get_to(c.data_dir);
    if (j.contains("out_dir")) j.at("out_dir").get_to(c.out_dir);
    if (j.contains("n_phantoms")) j.at("n_phantoms").get_to(c.n_phantoms);
    if (j.contains("split_fractions")) j.at("split_fractions").get_to(c.split_fractions);
    if (j.contains("preprocess")) j.at("preprocess").get_to(c.preprocess);
    if (j.contains("phantom")) j.at("phantom").get_to(c.phantom);
    if (j.contains("segmenter")) j.at("segmenter").get_to(c.segmenter);
    if (j.contains("translator")) j.at("translator").get_to(c.translator);
    if (j.contains("taps")) j.at("taps").get_to(c.taps);
    if (j.contains("seg_train")) j.at("seg_train").get_to(c.seg_train);
    if (j.contains("synth_train")) j.at("synth_train").get_to(c.synth_train);
    if (j.contains("tolerance_mm")) j.at("tolerance_mm").get_to(c.tolerance_mm);
    if (j.contains("eval_labels")) j.at("eval_labels").get_to(c.eval_labels);
    if (j.contains("tiling")) j.at("tiling").get_to(c.tiling);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
}

// Stable short hash of a config document, embedded in artifact fingerprints.
inline std::string config_hash(const json& j) {
    std::string dump = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace afp

// Command-line front end: phantom dataset generation, preprocessing, both
// trainers, patch-wise synthesis, silver-standard evaluation, and ablation
// report formatting. One subcommand per pipeline stage.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "afp/config.hpp"
#include "afp/io.hpp"
#include "afp/metrics.hpp"
#include "afp/phantom.hpp"
#include "afp/preprocess.hpp"
#include "afp/spectral.hpp"
#include "afp/train.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace afp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

void apply_thread_cap() {
    if (const char* env = std::getenv("AFP_NUM_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) {
#ifdef _OPENMP
            omp_set_num_threads(n);
#endif
            Eigen::setNbThreads(n);
        }
    }
}

RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override) {
    RunConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::UNREADABLE_FILE, "config file: " + path);
        json j = json::parse(in, nullptr, true);
        cfg = j.get<RunConfig>();
    }
    if (seed_override) cfg.seed = *seed_override;
    cfg.preprocess.validate();
    cfg.phantom.validate();
    cfg.segmenter.validate();
    cfg.translator.validate();
    return cfg;
}

std::string case_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "case_%03d", i);
    return buf;
}

struct CasePaths {
    std::string mr, ct, labels;
};

CasePaths case_paths(const std::string& dir, const std::string& id) {
    return {dir + "/" + id + "_mr.raw", dir + "/" + id + "_ct.raw",
            dir + "/" + id + "_labels.raw"};
}

std::vector<std::string> manifest_case_ids(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw Error(ErrorCode::UNREADABLE_FILE, "missing manifest: " + dir + "/manifest.json");
    json m = json::parse(in, nullptr, true);
    return m.at("cases").get<std::vector<std::string>>();
}

VolumePair load_case(const std::string& dir, const std::string& id) {
    auto p = case_paths(dir, id);
    VolumePair pair;
    pair.source = load_volume(p.mr, VolumeFormat::RAW_JSON);
    pair.target = load_volume(p.ct, VolumeFormat::RAW_JSON);
    pair.labels = load_labels(p.labels);
    return pair;
}

void write_manifest(const std::string& dir, const std::vector<std::string>& ids,
                    const RunConfig& cfg, const json& extra = json::object()) {
    json m{{"cases", ids},
           {"config_hash", config_hash(json(cfg))},
           {"seed", cfg.seed}};
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw Error(ErrorCode::UNWRITABLE_PATH, dir + "/manifest.json");
    out << m.dump(2) << "\n";
}

// train/val split of a case list per the config's split fractions (the test
// share is left untouched on disk for evaluation).
std::pair<std::vector<std::string>, std::vector<std::string>>
train_val_ids(const std::vector<std::string>& ids, const RunConfig& cfg) {
    auto [train_idx, val_idx, test_idx] = split_indices(
        ids.size(),
        {cfg.split_fractions[0], cfg.split_fractions[1], cfg.split_fractions[2]}, cfg.seed);
    (void)test_idx;
    std::vector<std::string> train, val;
    for (auto i : train_idx) train.push_back(ids[i]);
    for (auto i : val_idx) val.push_back(ids[i]);
    if (val.empty() && train.size() > 1) {
        val.push_back(train.back());
        train.pop_back();
    }
    return {train, val};
}

int cmd_phantom_gen(const RunConfig& cfg, const std::string& out_dir, int n) {
    fs::create_directories(out_dir);
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
        PhantomSpec spec = cfg.phantom;
        spec.seed = cfg.seed * 1000003ull + static_cast<std::uint64_t>(i);
        VolumePair pair = generate_phantom(spec);
        auto p = case_paths(out_dir, case_id(i));
        save_volume(pair.source, p.mr, VolumeFormat::RAW_JSON);
        save_volume(pair.target, p.ct, VolumeFormat::RAW_JSON);
        save_labels(*pair.labels, p.labels);
        ids.push_back(case_id(i));
    }
    write_manifest(out_dir, ids, cfg, {{"stage", "phantom-gen"}, {"n_cases", n}});
    std::cout << "wrote " << n << " cases to " << out_dir << "\n";
    return kExitOk;
}

int cmd_preprocess(const RunConfig& cfg, const std::string& in_dir, const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto ids = manifest_case_ids(in_dir);
    for (const auto& id : ids) {
        VolumePair pair = load_case(in_dir, id);
        Volume mr = resample_volume(pair.source, cfg.preprocess.target_spacing,
                                    cfg.preprocess.mr_interpolation);
        Volume ct = resample_volume(pair.target, cfg.preprocess.target_spacing,
                                    Interpolation::LINEAR);
        LabelVolume labels = resample_labels(*pair.labels, cfg.preprocess.target_spacing);
        auto [mr_n, mr_stats] = zscore_normalize_mr(mr);
        auto fg = foreground_from_labels(labels);
        auto [ct_n, ct_stats] =
            normalize_ct(ct, fg, cfg.preprocess.ct_clip_low, cfg.preprocess.ct_clip_high);
        auto p = case_paths(out_dir, id);
        save_volume(mr_n, p.mr, VolumeFormat::RAW_JSON);
        save_volume(ct_n, p.ct, VolumeFormat::RAW_JSON);
        save_labels(labels, p.labels);
        json stats{{"mr", {{"mean", mr_stats.mean}, {"std", mr_stats.std}}},
                   {"ct",
                    {{"p_low", ct_stats.p_low},
                     {"p_high", ct_stats.p_high},
                     {"mean", ct_stats.mean},
                     {"std", ct_stats.std}}}};
        std::ofstream(out_dir + "/" + id + "_stats.json") << stats.dump(2) << "\n";
    }
    write_manifest(out_dir, ids, cfg, {{"stage", "preprocess"}});
    std::cout << "preprocessed " << ids.size() << " cases to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train_seg(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto ids = manifest_case_ids(data_dir);
    auto [train_ids, val_ids] = train_val_ids(ids, cfg);
    std::vector<SegSample> train, val;
    for (const auto& id : train_ids) {
        auto pair = load_case(data_dir, id);
        train.push_back({std::move(pair.target), std::move(*pair.labels)});
    }
    for (const auto& id : val_ids) {
        auto pair = load_case(data_dir, id);
        val.push_back({std::move(pair.target), std::move(*pair.labels)});
    }

    nn::UNet<float> model(cfg.segmenter, cfg.seed ^ 0x5e9u);
    SegTrainOptions opts = cfg.seg_train;
    opts.seed = cfg.seed;
    auto r = train_segmentation(model, train, val, opts);
    r.checkpoint.config = json(cfg.segmenter);
    r.checkpoint.fingerprint += " config:" + config_hash(json(cfg));
    r.checkpoint.save(out_dir + "/segmenter");
    std::ofstream(out_dir + "/seg_loss.csv") << r.loss_log;
    std::cout << "segmenter checkpoint at " << out_dir << "/segmenter (best val dice "
              << r.best_val_dice << ")\n";
    return kExitOk;
}

TrainPlan plan_for_mode(const RunConfig& cfg, const std::string& mode) {
    TrainPlan plan = cfg.synth_train;
    plan.seed = cfg.seed;
    auto stage = [&](double l1, double afp, double adv, double fm) {
        StagePlan s;
        s.loss.w_l1 = l1;
        s.loss.w_afp = afp;
        s.loss.w_adv = adv;
        s.loss.w_fm = fm;
        return s;
    };
    int e1 = plan.stage1 ? plan.stage1->epochs : plan.stage2.epochs;
    int e2 = plan.stage2.epochs;
    double lr1 = plan.stage1 ? plan.stage1->lr : 1e-3;
    double lr2 = plan.stage2.lr;
    if (mode == "L1") {
        plan.stage1.reset();
        plan.stage2 = stage(1, 0, 0, 0);
        plan.stage2.epochs = e1 + e2;
        plan.stage2.lr = lr1;
    } else if (mode == "AFP") {
        plan.stage1.reset();
        plan.stage2 = stage(0, 1, 0, 0);
        plan.stage2.epochs = e1 + e2;
        plan.stage2.lr = lr1;
    } else if (mode == "L1_PLUS_AFP") {
        plan.stage1.reset();
        plan.stage2 = stage(1, 1, 0, 0);
        plan.stage2.epochs = e1 + e2;
        plan.stage2.lr = lr1;
    } else if (mode == "L1_THEN_AFP") {
        plan.stage1 = stage(1, 0, 0, 0);
        plan.stage1->epochs = e1;
        plan.stage1->lr = lr1;
        plan.stage2 = stage(0, 1, 0, 0);
        plan.stage2.epochs = e2;
        plan.stage2.lr = lr2 < lr1 ? lr2 : 1e-4;
    } else if (mode == "GAN_AFP") {
        plan.stage1.reset();
        plan.stage2 = stage(1, 1, 0.05, 0.5);
        plan.stage2.epochs = e1 + e2;
        plan.stage2.lr = lr1;
    } else {
        throw Error(ErrorCode::CONFIG_INVALID, "unknown mode: " + mode);
    }
    return plan;
}

int cmd_train_synth(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                    const std::string& mode, const std::string& segmenter_stem) {
    fs::create_directories(out_dir);
    TrainPlan plan = plan_for_mode(cfg, mode);
    const bool needs_afp = plan.stage2.loss.w_afp > 0 ||
                           (plan.stage1 && plan.stage1->loss.w_afp > 0);
    if (needs_afp && segmenter_stem.empty())
        throw Error(ErrorCode::CONFIG_CONFLICT,
                    "mode " + mode + " requires --segmenter <checkpoint stem>");

    std::optional<nn::UNet<float>> extractor;
    if (!segmenter_stem.empty()) {
        auto ck = ModelCheckpoint::load(segmenter_stem);
        extractor.emplace(ck.config.get<nn::UNetConfig>(), 0);
        extractor->load_weights(ck.weights);
        extractor->freeze();
    }
    nn::FeatureTapConfig taps = cfg.taps;
    if (extractor) taps = nn::FeatureTapConfig::all_blocks(extractor->config().depth);

    auto ids = manifest_case_ids(data_dir);
    auto [train_ids, val_ids] = train_val_ids(ids, cfg);
    std::vector<VolumePair> train, val;
    for (const auto& id : train_ids) train.push_back(load_case(data_dir, id));
    for (const auto& id : val_ids) val.push_back(load_case(data_dir, id));

    nn::UNet<float> model(cfg.translator, cfg.seed ^ 0x7a3u);
    auto r = train_translation(model, train, val, plan,
                               extractor ? &*extractor : nullptr, taps);
    r.checkpoint.config = json(cfg.translator);
    r.checkpoint.fingerprint += " mode:" + mode + " config:" + config_hash(json(cfg));
    r.checkpoint.save(out_dir + "/translator");
    std::ofstream(out_dir + "/synth_loss.csv") << r.loss_log;
    if (r.stage1_weights) {
        ModelCheckpoint s1;
        s1.weights = *r.stage1_weights;
        s1.config = json(cfg.translator);
        s1.fingerprint = r.checkpoint.fingerprint + " stage:1";
        s1.save(out_dir + "/translator_stage1");
    }
    std::cout << "translator checkpoint at " << out_dir << "/translator (mode " << mode << ")\n";
    return kExitOk;
}

int cmd_synth(const RunConfig& cfg, const std::string& ckpt_stem, const std::string& in_dir,
              const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto ck = ModelCheckpoint::load(ckpt_stem);
    nn::UNet<float> model(ck.config.get<nn::UNetConfig>(), 0);
    model.load_weights(ck.weights);

    auto ids = manifest_case_ids(in_dir);
    for (const auto& id : ids) {
        auto p_in = case_paths(in_dir, id);
        Volume mr = load_volume(p_in.mr, VolumeFormat::RAW_JSON);
        Volume synth = translate_volume(model, mr, cfg.synth_train.patch_size, cfg.tiling,
                                        BlendMode::MEDIAN);
        save_volume(synth, out_dir + "/" + id + "_synth.raw", VolumeFormat::RAW_JSON);
    }
    write_manifest(out_dir, ids, cfg, {{"stage", "synth"}, {"checkpoint", ckpt_stem}});
    std::cout << "synthesized " << ids.size() << " volumes to " << out_dir << "\n";
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& real_dir, const std::string& synth_dir,
             const std::string& segmenter_stem, const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto ck = ModelCheckpoint::load(segmenter_stem);
    nn::UNet<float> seg(ck.config.get<nn::UNetConfig>(), 0);
    seg.load_weights(ck.weights);
    seg.freeze();
    auto segmenter = [&](const Volume& v) {
        return segment_volume(seg, v, cfg.seg_train.patch_size, cfg.tiling);
    };

    auto ids = manifest_case_ids(real_dir);
    std::ostringstream csv;
    csv << "case,mae,ssim,checkerboard";
    for (auto l : cfg.eval_labels) csv << ",dice_" << l << ",nsd_" << l;
    csv << "\n";
    std::map<std::string, std::vector<double>> agg;
    for (const auto& id : ids) {
        std::string synth_path = synth_dir + "/" + id + "_synth.raw";
        if (!fs::exists(synth_path))
            throw Error(ErrorCode::CASE_MISMATCH, "no synthesized volume for " + id);
        Volume real = load_volume(case_paths(real_dir, id).ct, VolumeFormat::RAW_JSON);
        Volume synth = load_volume(synth_path, VolumeFormat::RAW_JSON);
        auto r = silver_standard_eval(real, synth, segmenter, cfg.tolerance_mm,
                                      cfg.eval_labels, id);
        double cb = checkerboard_energy(synth);
        csv << id << "," << r.mae << "," << r.ssim << "," << cb;
        agg["mae"].push_back(r.mae);
        agg["ssim"].push_back(r.ssim);
        agg["checkerboard"].push_back(cb);
        for (auto l : cfg.eval_labels) {
            csv << "," << r.per_label.at(l).dice << "," << r.per_label.at(l).nsd;
            agg["dice_" + std::to_string(l)].push_back(r.per_label.at(l).dice);
            agg["nsd_" + std::to_string(l)].push_back(r.per_label.at(l).nsd);
        }
        csv << "\n";
    }
    std::ofstream(out_dir + "/per_case.csv") << csv.str();

    json summary{{"config_hash", config_hash(json(cfg))},
                 {"seed", cfg.seed},
                 {"n_cases", ids.size()},
                 {"tolerance_mm", cfg.tolerance_mm}};
    for (const auto& [k, v] : agg) {
        double mean = 0, sd = 0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        for (double x : v) sd += (x - mean) * (x - mean);
        sd = v.size() > 1 ? std::sqrt(sd / static_cast<double>(v.size() - 1)) : 0.0;
        summary[k] = {{"mean", mean}, {"std", sd}};
    }
    std::ofstream(out_dir + "/aggregate.json") << summary.dump(2) << "\n";
    std::cout << "evaluation written to " << out_dir << "\n";
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& run_files, const std::string& out_path) {
    std::ostringstream md;
    md << "| run | mae | ssim | checkerboard | dice | nsd |\n";
    md << "|---|---|---|---|---|---|\n";
    auto cell = [](const json& j, const std::string& key) {
        if (!j.contains(key)) return std::string("-");
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f ± %.4f", j.at(key).at("mean").get<double>(),
                      j.at(key).at("std").get<double>());
        return std::string(buf);
    };
    for (const auto& f : run_files) {
        std::ifstream in(f);
        if (!in) throw Error(ErrorCode::UNREADABLE_FILE, "aggregate file: " + f);
        json j = json::parse(in, nullptr, true);
        // first label's scores stand in for the run's headline dice/nsd
        std::string dice = "-", nsd = "-";
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.key().rfind("dice_", 0) == 0 && dice == "-") dice = cell(j, it.key());
            if (it.key().rfind("nsd_", 0) == 0 && nsd == "-") nsd = cell(j, it.key());
        }
        md << "| " << fs::path(f).parent_path().filename().string() << " | " << cell(j, "mae")
           << " | " << cell(j, "ssim") << " | " << cell(j, "checkerboard") << " | " << dice
           << " | " << nsd << " |\n";
    }
    if (out_path.empty()) {
        std::cout << md.str();
    } else {
        std::ofstream out(out_path);
        if (!out) throw Error(ErrorCode::UNWRITABLE_PATH, out_path);
        out << md.str();
        std::cout << "report written to " << out_path << "\n";
    }
    return kExitOk;
}

bool is_config_error(ErrorCode c) {
    switch (c) {
        case ErrorCode::CONFIG_INVALID:
        case ErrorCode::CONFIG_CONFLICT:
        case ErrorCode::SPEC_INVALID:
        case ErrorCode::BAD_FRACTIONS:
        case ErrorCode::UNREADABLE_FILE:
        case ErrorCode::UNWRITABLE_PATH:
            return true;
        default:
            return false;
    }
}

} // namespace

int main(int argc, char** argv) {
    apply_thread_cap();

    CLI::App app{"anatomical-feature-prioritized MR-to-CT synthesis pipeline"};
    app.require_subcommand(0, 1);

    std::string config_path, in_dir, out_dir = "out", mode = "L1", ckpt, segmenter, real_dir,
                synth_dir;
    std::vector<std::string> run_files;
    std::optional<std::uint64_t> seed;
    int n_cases = -1;
    bool print_config = false;

    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed, "override the config seed");
    app.add_flag("--print-config", print_config, "dump the effective config as JSON and exit");

    auto* gen = app.add_subcommand("phantom-gen", "generate a procedural phantom dataset");
    gen->add_option("--out", out_dir, "output directory");
    gen->add_option("--n", n_cases, "number of cases (default: config n_phantoms)");

    auto* prep = app.add_subcommand("preprocess", "resample and normalize a dataset");
    prep->add_option("--in", in_dir, "input dataset directory")->required();
    prep->add_option("--out", out_dir, "output directory");

    auto* tseg = app.add_subcommand("train-seg", "train the segmentation backbone");
    tseg->add_option("--data", in_dir, "dataset directory")->required();
    tseg->add_option("--out", out_dir, "output directory");

    auto* tsyn = app.add_subcommand("train-synth", "train the MR-to-CT translator");
    tsyn->add_option("--data", in_dir, "dataset directory")->required();
    tsyn->add_option("--out", out_dir, "output directory");
    tsyn->add_option("--mode", mode, "L1 | AFP | L1_PLUS_AFP | L1_THEN_AFP | GAN_AFP");
    tsyn->add_option("--segmenter", segmenter, "segmenter checkpoint stem (feature extractor)");

    auto* syn = app.add_subcommand("synth", "synthesize CT volumes patch-wise");
    syn->add_option("--checkpoint", ckpt, "translator checkpoint stem")->required();
    syn->add_option("--in", in_dir, "input dataset directory")->required();
    syn->add_option("--out", out_dir, "output directory");

    auto* ev = app.add_subcommand("eval", "silver-standard evaluation of synthesized volumes");
    ev->add_option("--real", real_dir, "directory with real CT cases")->required();
    ev->add_option("--synth", synth_dir, "directory with synthesized volumes")->required();
    ev->add_option("--segmenter", segmenter, "frozen segmenter checkpoint stem")->required();
    ev->add_option("--out", out_dir, "output directory");

    auto* rep = app.add_subcommand("report", "format eval aggregates as a markdown table");
    rep->add_option("--runs", run_files, "aggregate.json files to tabulate")->required();
    rep->add_option("--out", out_dir, "output markdown path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        RunConfig cfg = load_config(config_path, seed);
        if (print_config) {
            std::cout << json(cfg).dump(2) << "\n";
            return kExitOk;
        }
        if (gen->parsed())
            return cmd_phantom_gen(cfg, out_dir, n_cases >= 0 ? n_cases : cfg.n_phantoms);
        if (prep->parsed()) return cmd_preprocess(cfg, in_dir, out_dir);
        if (tseg->parsed()) return cmd_train_seg(cfg, in_dir, out_dir);
        if (tsyn->parsed()) return cmd_train_synth(cfg, in_dir, out_dir, mode, segmenter);
        if (syn->parsed()) return cmd_synth(cfg, ckpt, in_dir, out_dir);
        if (ev->parsed()) return cmd_eval(cfg, real_dir, synth_dir, segmenter, out_dir);
        if (rep->parsed()) return cmd_report(run_files, out_dir == "out" ? "" : out_dir);
        std::cerr << app.help();
        return kExitConfig;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return is_config_error(e.code()) ? kExitConfig : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

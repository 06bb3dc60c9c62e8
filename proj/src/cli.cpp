// SPDX-License-Identifier: Apache-2.0
#include "metapoint/cli.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "metapoint/checkpoint.hpp"
#include "metapoint/config.hpp"
#include "metapoint/episodes.hpp"
#include "metapoint/evaluator.hpp"
#include "metapoint/model.hpp"
#include "metapoint/trainer.hpp"
#include "metapoint/viz.hpp"

namespace metapoint {

namespace fs = std::filesystem;

namespace {

// Flags that map one-to-one onto RunConfig keys.
struct ConfigFlags {
    std::vector<std::pair<std::string, std::string>> flag_to_key{
        {"meta-points", "num_meta_points"}, {"layers", "layers"},
        {"levels", "levels"},               {"dim", "dim"},
        {"heads", "heads"},                 {"sampling-points", "sampling_points"},
        {"ffn-dim", "ffn_dim"},             {"slack", "slack"},
        {"alpha", "alpha"},                 {"pool-sigma", "pool_sigma"},
        {"refine-from-layer", "refine_from_layer"}, {"lr", "learning_rate"},
        {"steps", "steps"},                 {"batch", "batch_size"},
        {"shots", "shots"},                 {"checkpoint-every", "checkpoint_every"},
        {"seed", "seed"},                   {"ablate", "ablate"},
    };
    std::map<std::string, std::string> values;
    std::vector<std::string> sets;
    std::string config_file;

    void attach(CLI::App& app, bool structural_only = false) {
        for (const auto& [flag, key] : flag_to_key) {
            const bool structural = key == "num_meta_points" || key == "layers" || key == "levels" || key == "dim" ||
                                    key == "heads" || key == "sampling_points" || key == "ffn_dim";
            if (structural_only && !structural) continue;
            app.add_option("--" + flag, values[flag], "config key " + key);
        }
        if (!structural_only) {
            app.add_option("--config", config_file, "key = value config file");
            app.add_option("--set", sets, "extra key=value override (repeatable)");
        }
    }

    // Config file first, then explicit flags, then --set in order.
    void apply(CLI::App& app, RunConfig& cfg) const {
        if (!config_file.empty()) {
            for (const auto& [k, v] : read_key_value_file(config_file)) apply_setting(cfg, k, v);
        }
        for (const auto& [flag, key] : flag_to_key) {
            auto* opt = app.get_option_no_throw("--" + flag);
            if (opt != nullptr && opt->count() > 0) apply_setting(cfg, key, values.at(flag));
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
            apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
        }
    }

    [[nodiscard]] bool given(CLI::App& app, const std::string& flag) const {
        auto* opt = app.get_option_no_throw("--" + flag);
        return opt != nullptr && opt->count() > 0;
    }
};

std::vector<int> classes_for(const Dataset& ds, const std::string& split, const std::string& held_out_family) {
    if (!held_out_family.empty()) {
        const ClassPartition p = cross_supercat_splits(ds, held_out_family);
        if (split == "train") return p.train;
        if (split == "test") return p.test;
        throw std::invalid_argument("with --held-out-family the split must be train or test");
    }
    return ds.class_ids(split_from_string(split));
}

int cmd_generate(const GenerateSpec& spec, const std::string& out_dir, std::ostream& out) {
    const Dataset ds = generate_dataset(spec);
    write_dataset(ds, out_dir);
    out << "wrote " << ds.samples.size() << " samples of " << ds.classes.size() << " classes to " << out_dir << "\n";
    for (Split s : {Split::Train, Split::Val, Split::Test}) out << "  " << to_string(s) << ": " << ds.class_ids(s).size() << " classes\n";
    return kExitOk;
}

struct TrainArgs {
    std::string data;
    std::string out;
    std::string resume;
    std::string log;
    std::string held_out_family;
    int log_every = 50;
};

int cmd_train(CLI::App& app, const ConfigFlags& flags, const TrainArgs& a, std::ostream& out) {
    const Dataset ds = load_dataset(a.data);
    RunConfig cfg;
    cfg.seed = seed_from_environment(0);
    std::optional<Checkpoint> resumed;
    if (!a.resume.empty()) {
        resumed = load_checkpoint(a.resume);
        cfg = resumed->config;
    }
    flags.apply(app, cfg);
    cfg.validate();
    if (resumed && cfg.structural_hash() != resumed->config.structural_hash()) {
        throw std::invalid_argument("requested structure conflicts with the checkpoint being resumed");
    }

    MetaPointModel model(cfg);
    const auto classes = classes_for(ds, "train", a.held_out_family);
    Trainer trainer(model, ds, classes);
    if (resumed) trainer.resume(*resumed);

    fs::create_directories(a.out);
    const fs::path log_path = a.log.empty() ? fs::path(a.out) / "train_log.csv" : fs::path(a.log);
    std::ofstream log(log_path, resumed ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write log " + log_path.string());
    if (!resumed) log << "step,class_id,reg,vis,full\n";
    log << std::setprecision(17);

    TrainHooks hooks;
    hooks.on_step = [&](const StepLog& s) {
        log << s.step << ',' << s.class_id << ',' << s.losses.reg << ',' << s.losses.vis << ',' << s.losses.full << '\n';
        if (a.log_every > 0 && s.step % a.log_every == 0) {
            out << "step " << s.step << "  reg " << s.losses.reg << "  vis " << s.losses.vis << "  full " << s.losses.full
                << std::endl;
        }
    };
    hooks.on_checkpoint = [&](long long step) {
        const Checkpoint c = trainer.checkpoint();
        save_checkpoint(fs::path(a.out) / ("checkpoint_" + std::to_string(step) + ".bin"), c);
        save_checkpoint(fs::path(a.out) / "checkpoint.bin", c);
        log.flush();
    };
    out << "training " << cfg.steps << " steps on " << classes.size() << " classes, "
        << model.parameters().scalar_count() << " parameters, config " << cfg.structural_hash() << "\n";
    if (trainer.completed() >= cfg.steps) {
        hooks.on_checkpoint(trainer.completed());
    } else {
        trainer.run(cfg.steps, hooks);
    }
    out << "saved " << (fs::path(a.out) / "checkpoint.bin").string() << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string data;
    std::string checkpoint;
    std::string split = "test";
    std::string mode = "all";
    std::string held_out_family;
    std::string out;
    int shots = 1;
    int episodes = 100;
    std::vector<std::uint64_t> seeds{0, 1, 2};
};

MetaPointModel load_model(const std::string& path, CLI::App& app, const ConfigFlags& flags) {
    const Checkpoint ckpt = load_checkpoint(path);
    // Structural flags on eval must agree with the checkpoint.
    RunConfig requested = ckpt.config;
    for (const auto& [flag, key] : flags.flag_to_key) {
        if (flags.given(app, flag)) apply_setting(requested, key, flags.values.at(flag));
    }
    if (requested.structural_hash() != ckpt.config.structural_hash()) {
        throw std::invalid_argument("requested structure conflicts with checkpoint " + path);
    }
    MetaPointModel model(ckpt.config);
    restore_parameters(ckpt, model.parameters());
    return model;
}

int cmd_eval(CLI::App& app, const ConfigFlags& flags, const EvalArgs& a, std::ostream& out) {
    const Dataset ds = load_dataset(a.data);
    std::optional<MetaPointModel> model;
    if (a.mode != "grid") model.emplace(load_model(a.checkpoint, app, flags));

    std::vector<std::string> splits;
    if (a.split == "all") splits = a.held_out_family.empty() ? std::vector<std::string>{"train", "val", "test"}
                                                           : std::vector<std::string>{"train", "test"};
    else splits = {a.split};
    std::vector<EvalMode> modes;
    if (a.mode == "all") modes = {EvalMode::MetaPoint, EvalMode::MetaPointPlus, EvalMode::Grid};
    else modes = {eval_mode_from_string(a.mode)};

    EvalOptions opts;
    opts.shots = a.shots;
    opts.episodes = a.episodes;
    opts.seeds = a.seeds;
    const int grid_points = model ? model->config().num_meta_points : RunConfig{}.num_meta_points;

    nlohmann::json results = nlohmann::json::array();
    for (const auto& split : splits) {
        const auto classes = classes_for(ds, split, a.held_out_family);
        std::vector<EvalReport> reports;
        if (model && modes.size() == 3) {
            reports = evaluate_all(*model, ds, classes, opts);
        } else {
            for (EvalMode m : modes) reports.push_back(evaluate(model ? &*model : nullptr, ds, classes, m, opts, grid_points));
        }
        for (auto& r : reports) {
            r.split = split;
            out << std::left << std::setw(6) << split << std::setw(16) << to_string(r.mode) << std::fixed
                << std::setprecision(4) << "PCK@0.2 " << r.pck_at(0.2) << " +- " << r.pck_std.back() << "   mPCK "
                << r.mpck_mean << " +- " << r.mpck_std << std::defaultfloat << "\n";
            results.push_back(to_json(r));
        }
    }
    if (!a.out.empty()) {
        const fs::path p(a.out);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        std::ofstream f(p);
        if (!f) throw std::runtime_error("cannot write " + a.out);
        f << nlohmann::json{{"checkpoint", a.checkpoint}, {"results", results}}.dump(2) << "\n";
    }
    return kExitOk;
}

struct VizArgs {
    std::string data;
    std::string checkpoint;
    std::string out;
    std::string split = "test";
    int episodes = 4;
    int shots = 1;
    int track = -1;
    int track_samples = 8;
    int scale = 4;
    std::uint64_t seed = 0;
};

int cmd_viz(CLI::App& app, const ConfigFlags& flags, const VizArgs& a, std::ostream& out) {
    const Dataset ds = load_dataset(a.data);
    const MetaPointModel model = load_model(a.checkpoint, app, flags);
    fs::create_directories(a.out);
    const auto classes = ds.class_ids(split_from_string(a.split));
    for (int i = 0; i < a.episodes; ++i) {
        const Episode ep = sample_episode(ds, classes, a.shots, eval_episode_seed(a.seed, i));
        const fs::path p = fs::path(a.out) / ("episode_" + std::to_string(i) + ".png");
        write_png(p, viz::episode_figure(model, view_of(ep), a.scale));
        out << "wrote " << p.string() << "\n";
    }
    if (a.track >= 0) {
        // Tracked meta-point across samples of every class in the split.
        std::vector<const Image*> images;
        for (int c : classes) {
            const auto idx = ds.sample_indices(c);
            const int take = std::min<int>(a.track_samples, static_cast<int>(idx.size()));
            for (int j = 0; j < take; ++j) images.push_back(&ds.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])].image);
        }
        std::vector<bool> drawn;
        const fs::path p = fs::path(a.out) / ("track_meta_" + std::to_string(a.track) + ".png");
        write_png(p, viz::tracking_figure(model, images, a.track, a.scale, &drawn));
        out << "wrote " << p.string() << " (" << std::count(drawn.begin(), drawn.end(), true) << "/" << drawn.size()
            << " tiles above visibility 0.5)\n";
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Few-shot keypoint localization with meta-points", "metapoint"};
    app.require_subcommand(1);

    GenerateSpec gen;
    std::string gen_out;
    std::optional<std::uint64_t> gen_seed;
    auto* generate = app.add_subcommand("generate", "generate a synthetic keypoint dataset");
    generate->add_option("--classes", gen.classes, "number of classes")->capture_default_str();
    generate->add_option("--per-class", gen.per_class, "samples per class")->capture_default_str();
    generate->add_option("--size", gen.image_size, "image side in pixels")->capture_default_str();
    generate->add_option("--seed", gen_seed, "generator seed (default METAPOINT_SEED or 0)");
    generate->add_option("--occlusion", gen.occlusion_rate, "fraction of occluded keypoints")->capture_default_str();
    generate->add_option("--out", gen_out, "output directory")->required();

    ConfigFlags train_flags;
    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train on the base classes of a dataset");
    train->add_option("--data", train_args.data, "dataset root")->required();
    train->add_option("--out", train_args.out, "run directory for checkpoints and logs")->required();
    train->add_option("--resume", train_args.resume, "checkpoint to resume from");
    train->add_option("--log", train_args.log, "per-step CSV log (default <out>/train_log.csv)");
    train->add_option("--log-every", train_args.log_every, "print every N steps")->capture_default_str();
    train->add_option("--held-out-family", train_args.held_out_family, "train on all other shape families");
    train_flags.attach(*train);

    ConfigFlags eval_flags;
    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on episodes of a split");
    eval->add_option("--data", eval_args.data, "dataset root")->required();
    eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file");
    eval->add_option("--split", eval_args.split, "train, val, test, or all")->capture_default_str();
    eval->add_option("--mode", eval_args.mode, "metapoint, metapoint-plus, grid, or all")->capture_default_str();
    eval->add_option("--shots", eval_args.shots, "support images per episode")->capture_default_str();
    eval->add_option("--episodes", eval_args.episodes, "episodes per evaluation seed")->capture_default_str();
    eval->add_option("--eval-seeds", eval_args.seeds, "evaluation seeds")->capture_default_str();
    eval->add_option("--held-out-family", eval_args.held_out_family, "cross-family split instead of the manifest's");
    eval->add_option("--out", eval_args.out, "results JSON path");
    eval_flags.attach(*eval, true);

    ConfigFlags viz_flags;
    VizArgs viz_args;
    auto* vizc = app.add_subcommand("viz", "render episode and tracking figures");
    vizc->add_option("--data", viz_args.data, "dataset root")->required();
    vizc->add_option("--checkpoint", viz_args.checkpoint, "checkpoint file")->required();
    vizc->add_option("--out", viz_args.out, "output directory")->required();
    vizc->add_option("--split", viz_args.split, "split to draw episodes from")->capture_default_str();
    vizc->add_option("--episodes", viz_args.episodes, "episode figures to write")->capture_default_str();
    vizc->add_option("--shots", viz_args.shots, "support images per episode")->capture_default_str();
    vizc->add_option("--track", viz_args.track, "meta-point index to track across samples");
    vizc->add_option("--track-samples", viz_args.track_samples, "samples per class in the tracking figure")->capture_default_str();
    vizc->add_option("--scale", viz_args.scale, "pixel upscaling")->capture_default_str();
    vizc->add_option("--seed", viz_args.seed, "episode seed")->capture_default_str();
    viz_flags.attach(*vizc, true);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*generate) {
            gen.seed = gen_seed ? *gen_seed : seed_from_environment(0);
            return cmd_generate(gen, gen_out, out);
        }
        if (*train) return cmd_train(*train, train_flags, train_args, out);
        if (*eval) {
            if (eval_args.mode != "grid" && eval_args.checkpoint.empty()) {
                err << "eval: --checkpoint is required unless --mode grid\n";
                return kExitUsage;
            }
            return cmd_eval(*eval, eval_flags, eval_args, out);
        }
        if (*vizc) return cmd_viz(*vizc, viz_flags, viz_args, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace metapoint

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "sfcn/checkpoint.hpp"
#include "sfcn/data.hpp"
#include "sfcn/evaluate.hpp"
#include "sfcn/png_io.hpp"
#include "sfcn/reports.hpp"
#include "sfcn/runconfig.hpp"
#include "sfcn/train.hpp"

namespace fs = std::filesystem;
using namespace sfcn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct GlobalArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
};

RunConfig load_config(const GlobalArgs& g) {
    RunConfig cfg = RunConfig::from_file(g.config_path);
    if (g.seed_set) cfg.seed = g.seed;
    return cfg;
}

void require_dataset(const std::string& dir) {
    if (dir.empty()) throw ConfigError("paths.dataset_dir is not set");
    if (!fs::exists(fs::path(dir) / "manifest.json"))
        throw ConfigError("dataset not found at " + dir + " (missing manifest.json)");
}

int cmd_synth(const GlobalArgs& g, const std::string& out_dir_arg, int n) {
    RunConfig cfg = load_config(g);
    if (n <= 0) throw ConfigError("--n must be a positive image count");
    std::string out_dir = out_dir_arg.empty() ? cfg.paths.dataset_dir : out_dir_arg;
    if (out_dir.empty()) throw ConfigError("no output directory (set --out or paths.dataset_dir)");

    std::vector<AnnotatedImage> images = generate(cfg.synth, n, cfg.seed);
    save_dataset(out_dir, images, cfg.synth, cfg.seed);
    std::cout << "wrote " << images.size() << " images to " << out_dir << "\n";
    return kExitOk;
}

// writes checkpoints/log under checkpoint_dir, metrics under report_dir
int cmd_train(const GlobalArgs& g, const std::string& regime_arg) {
    RunConfig cfg = load_config(g);
    require_dataset(cfg.paths.dataset_dir);
    if (cfg.paths.checkpoint_dir.empty()) throw ConfigError("paths.checkpoint_dir is not set");
    if (cfg.paths.report_dir.empty()) throw ConfigError("paths.report_dir is not set");
    const RegimeKind kind = regime_from_name(regime_arg);
    const Regime regime = Regime::make(kind, cfg.train.stage_epochs);

    std::vector<AnnotatedImage> train_images = load_split(cfg.paths.dataset_dir, "train");
    std::vector<AnnotatedImage> val_images = load_split(cfg.paths.dataset_dir, "val");

    fs::create_directories(cfg.paths.checkpoint_dir);
    fs::create_directories(cfg.paths.report_dir);
    const std::string prefix =
        (fs::path(cfg.paths.checkpoint_dir) / regime_name(kind)).string();

    double best_score = -1.0;
    TrainHooks hooks;
    hooks.on_stage_end = [&](int stage, const Parameters& params) {
        save_checkpoint(prefix + "_stage" + std::to_string(stage) + ".ckpt", params);
    };
    hooks.on_validation = [&](int epoch, const Parameters& params, const MetricsReport& rep) {
        const double score = rep.detection.f1 + rep.weighted.f1;
        if (score > best_score) {
            best_score = score;
            save_checkpoint(prefix + "_best.ckpt", params);
        }
        std::cout << "epoch " << epoch << ": val det F1 " << fmt_double(rep.detection.f1)
                  << ", weighted cls F1 " << fmt_double(rep.weighted.f1) << "\n";
    };

    TrainResult result = run_regime(regime, train_images, val_images, cfg.model, cfg.objective,
                                    cfg.train, cfg.seed, cfg.synth.mask_radius, hooks);

    save_checkpoint(prefix + "_final.ckpt", result.params);
    write_train_log_csv(
        (fs::path(cfg.paths.report_dir) / (regime_name(kind) + "_train_log.csv")).string(),
        result.log);

    EvalOutcome val = evaluate_model(result.params, val_images, {.threads = g.threads});
    write_metrics_csv(
        (fs::path(cfg.paths.report_dir) / (regime_name(kind) + "_val_metrics.csv")).string(),
        "val", val_images.size(), val);
    std::cout << metrics_summary_text("val", val_images.size(), val);
    return kExitOk;
}

int cmd_eval(const GlobalArgs& g, const std::string& checkpoint, const std::string& split,
             bool dump_matches) {
    RunConfig cfg = load_config(g);
    require_dataset(cfg.paths.dataset_dir);
    if (cfg.paths.report_dir.empty()) throw ConfigError("paths.report_dir is not set");

    Parameters params = load_checkpoint(checkpoint);
    ModelConfig expected = cfg.model;
    expected.image_height = cfg.train.patch_size;
    expected.image_width = cfg.train.patch_size;
    try {
        check_config_compatible(params.config, expected);
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());
    }

    std::vector<AnnotatedImage> images = load_split(cfg.paths.dataset_dir, split);
    EvalOutcome outcome = evaluate_model(params, images, {.threads = g.threads});

    fs::create_directories(cfg.paths.report_dir);
    const std::string stem =
        (fs::path(cfg.paths.report_dir) / ("eval_" + split)).string();
    write_metrics_csv(stem + "_metrics.csv", split, images.size(), outcome);
    write_metrics_summary(stem + "_summary.txt", split, images.size(), outcome);
    if (dump_matches) write_match_dump(stem + "_matches.jsonl", outcome);
    std::cout << metrics_summary_text(split, images.size(), outcome);
    return kExitOk;
}

int cmd_infer(const GlobalArgs& g, const std::string& checkpoint, const std::string& image_path,
              const std::string& dump_maps) {
    RunConfig cfg = load_config(g);
    Parameters params = load_checkpoint(checkpoint);
    Tensor image = read_png_rgb8(image_path);
    if (image.dim(1) != params.config.image_height || image.dim(2) != params.config.image_width)
        throw ConfigError("image size " + std::to_string(image.dim(1)) + "x" +
                          std::to_string(image.dim(2)) + " does not match checkpoint size " +
                          std::to_string(params.config.image_height) + "x" +
                          std::to_string(params.config.image_width));

    InferenceResult res = infer_image(params, image);
    std::cout << "row,col,objectness,category";
    for (int k = 0; k <= params.config.num_categories; ++k) std::cout << ",p_cls" << k;
    std::cout << "\n";
    for (const auto& p : res.points) {
        std::cout << p.row << ',' << p.col << ',' << fmt_double(p.objectness) << ','
                  << p.category;
        for (double v : p.class_probs) std::cout << ',' << fmt_double(v);
        std::cout << "\n";
    }

    if (!dump_maps.empty()) {
        // reuse the checkpoint record format for the two probability maps
        Parameters maps;
        maps.config = params.config;
        maps.items["det_probs"] = res.outputs.det_probs;
        maps.items["cls_cond_probs"] = res.outputs.cls_cond_probs;
        save_checkpoint(dump_maps, maps);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sibling-FCN nuclei detection and classification pipeline"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "run configuration file (JSON)")->required();
    auto* seed_opt = app.add_option("--seed", g.seed, "override the config master seed");
    app.add_option("--threads", g.threads, "worker threads for evaluation")
        ->check(CLI::PositiveNumber);

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_out;
    int synth_n = 0;
    synth->add_option("--out", synth_out, "output directory (default: paths.dataset_dir)");
    synth->add_option("--n", synth_n, "number of images")->required();

    auto* train = app.add_subcommand("train", "train a model under a regime");
    std::string regime;
    train->add_option("--regime", regime, "one of: fcn5cls, sfcn, opi_stage1_only, "
                                          "opi_skip_clspretrain, opi_full")
        ->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string eval_checkpoint, eval_split = "test";
    bool eval_dump_matches = false;
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    eval->add_option("--split", eval_split, "train, val, or test");
    eval->add_flag("--dump-matches", eval_dump_matches, "write per-image match records");

    auto* infer = app.add_subcommand("infer", "run single-image inference");
    std::string infer_checkpoint, infer_image_path, infer_dump_maps;
    infer->add_option("--checkpoint", infer_checkpoint, "checkpoint file")->required();
    infer->add_option("--image", infer_image_path, "input PNG")->required();
    infer->add_option("--dump-maps", infer_dump_maps, "write probability maps to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
    }
    g.seed_set = seed_opt->count() > 0;

    try {
        if (synth->parsed()) return cmd_synth(g, synth_out, synth_n);
        if (train->parsed()) return cmd_train(g, regime);
        if (eval->parsed()) return cmd_eval(g, eval_checkpoint, eval_split, eval_dump_matches);
        if (infer->parsed()) return cmd_infer(g, infer_checkpoint, infer_image_path,
                                              infer_dump_maps);
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DivergenceError& e) {
        std::cerr << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

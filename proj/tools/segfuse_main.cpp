// segfuse: synthetic-orchard video segmentation pipeline driver.
//
// Subcommands: generate, train {seg|cycle|fusion}, evaluate, propagate.
// Exit codes: 0 success, 2 bad config, 3 missing upstream artifact, 4 I/O.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "segfuse/experiment.hpp"

namespace fs = std::filesystem;
using namespace segfuse;

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON experiment config");
    cmd->add_option("--seed", opts.seed, "override the experiment seed");
    cmd->add_option("--out", opts.out_dir, "override the output directory");
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
    ExperimentConfig cfg;
    if (!opts.config_path.empty()) cfg = load_config_file(opts.config_path);
    if (opts.seed) {
        cfg.seed = *opts.seed;
        cfg.scene.seed = *opts.seed;
    }
    if (opts.out_dir) cfg.output_dir = *opts.out_dir;
    cfg.validate();
    fs::create_directories(cfg.output_dir);
    return cfg;
}

int run_propagate(const ExperimentConfig& cfg, const std::string& frames_dir,
                  const std::string& first_mask_path, const std::string& dest) {
    CycleModel model = [&] {
        if (!fs::exists(cycle_checkpoint_path(cfg)))
            throw MissingArtifactError("missing cycle checkpoint (" +
                                       cycle_checkpoint_path(cfg) +
                                       "); run `train cycle` first");
        return load_cycle_model(cycle_checkpoint_path(cfg));
    }();

    std::vector<fs::path> frame_paths;
    if (!fs::is_directory(frames_dir)) throw IoError("not a directory: " + frames_dir);
    for (const auto& e : fs::directory_iterator(frames_dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("frame_", 0) == 0 && e.path().extension() == ".png")
            frame_paths.push_back(e.path());
    }
    std::sort(frame_paths.begin(), frame_paths.end());
    if (frame_paths.empty()) throw IoError("no frame_*.png files in " + frames_dir);

    VideoClip clip;
    for (const auto& p : frame_paths) clip.frames.push_back(read_png_rgb(p.string()));
    const BinaryMask first = read_mask_png(first_mask_path);

    const std::vector<SoftMask> soft = propagate_labels(model, first, clip, cfg.cycle.top_k);

    fs::create_directories(dest);
    // Frame 1's mask is the given mask verbatim, byte for byte.
    {
        std::ifstream in(first_mask_path, std::ios::binary);
        std::ofstream out(fs::path(dest) / "mask_00000.png", std::ios::binary);
        if (!in || !out) throw IoError("cannot copy first mask to " + dest);
        out << in.rdbuf();
    }
    for (size_t t = 1; t < soft.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "mask_%05zu.png", t);
        write_mask_png((fs::path(dest) / name).string(), threshold_mask(soft[t], 0.5));
        std::snprintf(name, sizeof(name), "soft_%05zu.png", t);
        write_soft_mask_png((fs::path(dest) / name).string(), soft[t]);
    }
    std::cout << "propagated " << soft.size() << " frames -> " << dest << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic-orchard video segmentation pipeline"};
    app.require_subcommand(1);

    CommonOpts opts;
    bool force = false;
    bool oracle_first_frame = false;
    std::string train_target;
    std::vector<std::string> eval_models;
    std::string frames_dir, first_mask_path, propagate_dest;

    CLI::App* gen = app.add_subcommand("generate", "render the synthetic dataset to disk");
    add_common(gen, opts);
    gen->add_flag("--force", force, "overwrite an existing dataset directory");

    CLI::App* train = app.add_subcommand("train", "train one pipeline stage");
    add_common(train, opts);
    train->add_option("stage", train_target, "seg | cycle | fusion")->required();

    CLI::App* eval = app.add_subcommand("evaluate", "score models on the test clips");
    add_common(eval, opts);
    eval->add_option("--models", eval_models,
                     "subset of {segnet, unsupervised, weighted_mean, fusion}");
    eval->add_flag("--oracle-first-frame", oracle_first_frame,
                   "anchor propagation on the ground-truth first mask");

    CLI::App* prop = app.add_subcommand("propagate", "propagate a first-frame mask through a clip");
    add_common(prop, opts);
    prop->add_option("--frames", frames_dir, "directory of frame_*.png images")->required();
    prop->add_option("--first-mask", first_mask_path, "first-frame mask PNG")->required();
    prop->add_option("--dest", propagate_dest, "output directory for masks")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        const ExperimentConfig cfg = resolve_config(opts);
        if (*gen) {
            run_generate(cfg, force);
            std::cout << "dataset written to " << dataset_dir(cfg) << "\n";
        } else if (*train) {
            if (train_target == "seg") {
                const SegTrainingHistory h = run_train_seg(cfg);
                std::cout << "seg checkpoint: " << seg_checkpoint_path(cfg)
                          << " (best epoch " << h.best_epoch << ")\n";
            } else if (train_target == "cycle") {
                const CycleTrainingHistory h = run_train_cycle(cfg);
                std::cout << "cycle checkpoint: " << cycle_checkpoint_path(cfg);
                if (!h.smoothed_loss.empty())
                    std::cout << " (final loss " << h.smoothed_loss.back() << ")";
                std::cout << "\n";
            } else if (train_target == "fusion") {
                run_train_fusion(cfg);
                std::cout << "fusion checkpoint: " << fusion_checkpoint_path(cfg) << "\n";
            } else {
                throw ConfigError("unknown training stage '" + train_target +
                                  "' (expected seg, cycle or fusion)");
            }
        } else if (*eval) {
            if (eval_models.empty())
                eval_models = {"segnet", "unsupervised", "weighted_mean", "fusion"};
            const EvaluationResult result = run_evaluate(cfg, eval_models, oracle_first_frame);
            for (const auto& [name, report] : result.reports) {
                std::cout << name << ": P=" << report.precision << " IOU=" << report.iou;
                if (report.j_mean) std::cout << " J=" << *report.j_mean;
                if (report.f_mean) std::cout << " F=" << *report.f_mean;
                std::cout << "\n";
            }
        } else if (*prop) {
            return run_propagate(cfg, frames_dir, first_mask_path, propagate_dest);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}

#include "segfuse/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <optional>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace segfuse {

SplitCounts ExperimentConfig::counts() const {
    SplitCounts c = source_split_counts(divisor);
    if (n_train_images >= 0) c.n_train_images = n_train_images;
    if (n_val_images >= 0) c.n_val_images = n_val_images;
    if (n_unlabelled_clips >= 0) c.n_unlabelled_clips = n_unlabelled_clips;
    if (n_test_clips >= 0) c.n_test_clips = n_test_clips;
    return c;
}

void ExperimentConfig::validate() const {
    scene.validate();
    if (scene.width != scene.height)
        throw ConfigError("experiment requires square frames, got " +
                          std::to_string(scene.width) + "x" + std::to_string(scene.height));
    if (segnet.input_size != scene.width)
        throw ConfigError("segnet input_size must equal frame size");
    if (cycle.input_size != scene.width)
        throw ConfigError("cycle input_size must equal frame size");
    if (fusion.mask_size != scene.width)
        throw ConfigError("fusion mask_size must equal frame size");
    segnet.validate();
    cycle.validate();
    fusion.validate();
    if (frame_stride < 1) throw ConfigError("frame_stride must be positive");
    if (output_dir.empty()) throw ConfigError("output_dir must be set");
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        cfg.scene.width = d.value("width", cfg.scene.width);
        cfg.scene.height = d.value("height", cfg.scene.height);
        cfg.scene.n_fruits = d.value("n_fruits", cfg.scene.n_fruits);
        cfg.scene.fruit_radius_min = d.value("fruit_radius_min", cfg.scene.fruit_radius_min);
        cfg.scene.fruit_radius_max = d.value("fruit_radius_max", cfg.scene.fruit_radius_max);
        cfg.scene.occluder_density = d.value("occluder_density", cfg.scene.occluder_density);
        cfg.scene.motion_amplitude = d.value("motion_amplitude", cfg.scene.motion_amplitude);
        cfg.scene.lighting_drift = d.value("lighting_drift", cfg.scene.lighting_drift);
        cfg.scene.clip_length = d.value("clip_length", cfg.scene.clip_length);
        cfg.divisor = d.value("divisor", cfg.divisor);
        cfg.frame_stride = d.value("frame_stride", cfg.frame_stride);
        cfg.n_train_images = d.value("n_train_images", cfg.n_train_images);
        cfg.n_val_images = d.value("n_val_images", cfg.n_val_images);
        cfg.n_unlabelled_clips = d.value("n_unlabelled_clips", cfg.n_unlabelled_clips);
        cfg.n_test_clips = d.value("n_test_clips", cfg.n_test_clips);
    }
    cfg.scene.seed = cfg.seed;

    cfg.segnet.input_size = cfg.scene.width;
    if (j.contains("segnet")) {
        const auto& s = j.at("segnet");
        cfg.segnet.base_channels = s.value("base_channels", cfg.segnet.base_channels);
        cfg.segnet.depth = s.value("depth", cfg.segnet.depth);
        cfg.segnet.skip_connections = s.value("skip_connections", cfg.segnet.skip_connections);
        cfg.segnet_train.epochs = s.value("epochs", cfg.segnet_train.epochs);
        cfg.segnet_train.batch_size = s.value("batch_size", cfg.segnet_train.batch_size);
        cfg.segnet_train.lr = s.value("lr", cfg.segnet_train.lr);
    }

    cfg.cycle.input_size = cfg.scene.width;
    if (j.contains("cycle")) {
        const auto& c = j.at("cycle");
        cfg.cycle.patch_size = c.value("patch_size", cfg.cycle.patch_size);
        cfg.cycle.encoder_depth = c.value("encoder_depth", cfg.cycle.encoder_depth);
        cfg.cycle.base_channels = c.value("base_channels", cfg.cycle.base_channels);
        cfg.cycle.feature_channels = c.value("feature_channels", cfg.cycle.feature_channels);
        cfg.cycle.temperature = c.value("temperature", cfg.cycle.temperature);
        cfg.cycle.cycle_len = c.value("cycle_len", cfg.cycle.cycle_len);
        cfg.cycle.top_k = c.value("top_k", cfg.cycle.top_k);
        cfg.cycle_train.steps = c.value("steps", cfg.cycle_train.steps);
        cfg.cycle_train.lr = c.value("lr", cfg.cycle_train.lr);
    }

    cfg.fusion.mask_size = cfg.scene.width;
    if (j.contains("fusion")) {
        const auto& f = j.at("fusion");
        cfg.fusion.token_dim = f.value("token_dim", cfg.fusion.token_dim);
        cfg.fusion.n_heads = f.value("n_heads", cfg.fusion.n_heads);
        cfg.fusion.n_layers = f.value("n_layers", cfg.fusion.n_layers);
        cfg.fusion.token_grid = f.value("token_grid", cfg.fusion.token_grid);
        cfg.fusion_train.epochs = f.value("epochs", cfg.fusion_train.epochs);
        cfg.fusion_train.batch_size = f.value("batch_size", cfg.fusion_train.batch_size);
        cfg.fusion_train.lr = f.value("lr", cfg.fusion_train.lr);
    }
    return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["dataset"] = {{"width", cfg.scene.width},
                    {"height", cfg.scene.height},
                    {"n_fruits", cfg.scene.n_fruits},
                    {"fruit_radius_min", cfg.scene.fruit_radius_min},
                    {"fruit_radius_max", cfg.scene.fruit_radius_max},
                    {"occluder_density", cfg.scene.occluder_density},
                    {"motion_amplitude", cfg.scene.motion_amplitude},
                    {"lighting_drift", cfg.scene.lighting_drift},
                    {"clip_length", cfg.scene.clip_length},
                    {"divisor", cfg.divisor},
                    {"frame_stride", cfg.frame_stride},
                    {"n_train_images", cfg.n_train_images},
                    {"n_val_images", cfg.n_val_images},
                    {"n_unlabelled_clips", cfg.n_unlabelled_clips},
                    {"n_test_clips", cfg.n_test_clips}};
    j["segnet"] = {{"base_channels", cfg.segnet.base_channels},
                   {"depth", cfg.segnet.depth},
                   {"skip_connections", cfg.segnet.skip_connections},
                   {"epochs", cfg.segnet_train.epochs},
                   {"batch_size", cfg.segnet_train.batch_size},
                   {"lr", cfg.segnet_train.lr}};
    j["cycle"] = {{"patch_size", cfg.cycle.patch_size},
                  {"encoder_depth", cfg.cycle.encoder_depth},
                  {"base_channels", cfg.cycle.base_channels},
                  {"feature_channels", cfg.cycle.feature_channels},
                  {"temperature", cfg.cycle.temperature},
                  {"cycle_len", cfg.cycle.cycle_len},
                  {"top_k", cfg.cycle.top_k},
                  {"steps", cfg.cycle_train.steps},
                  {"lr", cfg.cycle_train.lr}};
    j["fusion"] = {{"token_dim", cfg.fusion.token_dim},
                   {"n_heads", cfg.fusion.n_heads},
                   {"n_layers", cfg.fusion.n_layers},
                   {"token_grid", cfg.fusion.token_grid},
                   {"epochs", cfg.fusion_train.epochs},
                   {"batch_size", cfg.fusion_train.batch_size},
                   {"lr", cfg.fusion_train.lr}};
    return j;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

std::string dataset_dir(const ExperimentConfig& cfg) {
    return (fs::path(cfg.output_dir) / "dataset").string();
}
std::string seg_checkpoint_path(const ExperimentConfig& cfg) {
    return (fs::path(cfg.output_dir) / "seg.ckpt").string();
}
std::string cycle_checkpoint_path(const ExperimentConfig& cfg) {
    return (fs::path(cfg.output_dir) / "cycle.ckpt").string();
}
std::string fusion_checkpoint_path(const ExperimentConfig& cfg) {
    return (fs::path(cfg.output_dir) / "fusion.ckpt").string();
}

DatasetSplits build_dataset(const ExperimentConfig& cfg) {
    cfg.validate();
    const SplitCounts c = cfg.counts();
    return generate_dataset(cfg.scene, c.n_train_images, c.n_val_images, c.n_unlabelled_clips,
                            c.n_test_clips, cfg.frame_stride);
}

void run_generate(const ExperimentConfig& cfg, bool force) {
    cfg.validate();
    const fs::path root = dataset_dir(cfg);
    if (fs::exists(root) && !fs::is_empty(root)) {
        if (!force)
            throw ConfigError("dataset directory " + root.string() +
                              " is not empty; pass --force to overwrite");
        fs::remove_all(root);
    }
    const DatasetSplits splits = build_dataset(cfg);
    write_dataset(root.string(), splits, cfg.scene);
    std::ofstream out(fs::path(cfg.output_dir) / "experiment.json");
    out << config_to_json(cfg).dump(2) << "\n";
}

namespace {

void require_dataset(const ExperimentConfig& cfg) {
    if (!fs::exists(fs::path(dataset_dir(cfg)) / "manifest.json"))
        throw MissingArtifactError("missing dataset under " + dataset_dir(cfg) +
                                   "; run `generate` first");
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path))
        throw MissingArtifactError("missing " + what + " (" + path + ")");
}

}  // namespace

SegTrainingHistory run_train_seg(const ExperimentConfig& cfg) {
    cfg.validate();
    require_dataset(cfg);
    const DatasetSplits splits = build_dataset(cfg);
    SegModel model = build_segnet(cfg.segnet, cfg.seed);
    SegTrainingHistory history =
        train_segnet(model, splits.train, splits.val, cfg.segnet_train.epochs,
                     cfg.segnet_train.batch_size, cfg.segnet_train.lr, cfg.seed);
    save_segnet(seg_checkpoint_path(cfg), model, cfg.seed);

    nlohmann::json j;
    j["best_epoch"] = history.best_epoch;
    j["epochs"] = nlohmann::json::array();
    for (const auto& e : history.epochs)
        j["epochs"].push_back(
            {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_iou", e.val_iou}});
    std::ofstream out(fs::path(cfg.output_dir) / "seg_history.json");
    out << j.dump(2) << "\n";
    return history;
}

CycleTrainingHistory run_train_cycle(const ExperimentConfig& cfg) {
    cfg.validate();
    require_dataset(cfg);
    const DatasetSplits splits = build_dataset(cfg);
    CycleModel model = build_cycle_model(cfg.cycle, cfg.seed);
    CycleTrainingHistory history = train_cycle(model, splits.unlabelled_clips,
                                               cfg.cycle_train.steps, cfg.cycle_train.lr,
                                               cfg.seed);
    save_cycle_model(cycle_checkpoint_path(cfg), model, cfg.seed);

    nlohmann::json j;
    j["loss"] = history.loss;
    j["smoothed_loss"] = history.smoothed_loss;
    std::ofstream out(fs::path(cfg.output_dir) / "cycle_history.json");
    out << j.dump(2) << "\n";
    return history;
}

std::vector<LabelledClip> group_by_clip(const std::vector<LabelledImage>& images) {
    std::vector<LabelledClip> clips;
    for (const auto& img : images) {
        if (clips.empty() || clips.back().clip_id != img.clip_id) {
            clips.push_back({img.clip_id, {}});
            clips.back().clip.frame_rate = 30;
        }
        clips.back().clip.frames.push_back(img.frame);
        clips.back().clip.gt_masks.push_back(img.mask);
    }
    return clips;
}

std::vector<PredictionPair> build_fusion_pairs(const SegModel& seg, const CycleModel& cycle,
                                               const std::vector<LabelledClip>& clips) {
    std::vector<PredictionPair> pairs;
    for (const auto& lc : clips) {
        const VideoClip& clip = lc.clip;
        if (clip.frames.size() < 2) continue;
        const std::vector<SoftMask> temporal =
            propagate_labels(cycle, clip.gt_masks[0], clip, cycle.cfg.top_k);
        for (size_t t = 1; t < clip.frames.size(); ++t) {
            PredictionPair pair;
            pair.static_pred = predict_soft(seg, clip.frames[t]);
            pair.temporal_pred = temporal[t];
            pair.gt = clip.gt_masks[t];
            pairs.push_back(std::move(pair));
        }
    }
    return pairs;
}

FusionTrainingHistory run_train_fusion(const ExperimentConfig& cfg) {
    cfg.validate();
    require_dataset(cfg);
    require_file(seg_checkpoint_path(cfg), "segnet checkpoint; run `train seg` first");
    require_file(cycle_checkpoint_path(cfg), "cycle checkpoint; run `train cycle` first");
    const DatasetSplits splits = build_dataset(cfg);
    const SegModel seg = load_segnet(seg_checkpoint_path(cfg));
    const CycleModel cycle = load_cycle_model(cycle_checkpoint_path(cfg));

    const std::vector<PredictionPair> pairs =
        build_fusion_pairs(seg, cycle, group_by_clip(splits.train));
    FusionModel model = build_fusion_model(cfg.fusion, cfg.seed);
    FusionTrainingHistory history =
        train_fusion(model, pairs, cfg.fusion_train.epochs, cfg.fusion_train.batch_size,
                     cfg.fusion_train.lr, cfg.seed);
    save_fusion_model(fusion_checkpoint_path(cfg), model, cfg.seed);

    nlohmann::json j;
    j["epochs"] = nlohmann::json::array();
    for (const auto& e : history.epochs)
        j["epochs"].push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}});
    std::ofstream out(fs::path(cfg.output_dir) / "fusion_history.json");
    out << j.dump(2) << "\n";
    return history;
}

namespace {

int evaluation_threads() {
    if (const char* env = std::getenv("SEGFUSE_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return std::max(1u, std::min(hw, 4u));
}

struct ClipModelEval {
    std::map<std::string, ClipEvaluation> by_model;
};

ClipModelEval evaluate_clip(const ExperimentConfig& cfg, const VideoClip& clip,
                            const SegModel* seg, const CycleModel* cycle,
                            const FusionModel* fusion,
                            const std::vector<std::string>& models, bool oracle_first_frame) {
    const int T = static_cast<int>(clip.frames.size());
    auto wanted = [&](const std::string& m) {
        return std::find(models.begin(), models.end(), m) != models.end();
    };

    std::vector<SoftMask> static_soft;
    if (seg)
        for (const auto& frame : clip.frames) static_soft.push_back(predict_soft(*seg, frame));

    std::vector<SoftMask> temporal_soft;
    if (cycle) {
        const BinaryMask first = oracle_first_frame
                                     ? clip.gt_masks[0]
                                     : threshold_mask(static_soft[0], 0.5);
        temporal_soft = propagate_labels(*cycle, first, clip, cycle->cfg.top_k);
    }

    // Scored frames exclude the anchored first frame, uniformly across models.
    auto score = [&](const std::vector<BinaryMask>& preds) {
        ClipEvaluation e;
        double p = 0.0, i = 0.0;
        for (int t = 1; t < T; ++t) {
            p += precision(preds[t], clip.gt_masks[t]);
            i += iou(preds[t], clip.gt_masks[t]);
        }
        e.precision = p / (T - 1);
        e.iou = i / (T - 1);
        return e;
    };

    ClipModelEval out;
    if (wanted("segnet") && seg) {
        std::vector<BinaryMask> preds;
        for (const auto& s : static_soft) preds.push_back(threshold_mask(s, 0.5));
        out.by_model["segnet"] = score(preds);
    }
    if (wanted("unsupervised") && cycle) {
        std::vector<BinaryMask> preds;
        for (const auto& s : temporal_soft) preds.push_back(threshold_mask(s, 0.5));
        ClipEvaluation e = score(preds);
        e.j = davis_j(preds, clip.gt_masks);
        e.f = davis_f(preds, clip.gt_masks,
                      default_boundary_tolerance(cfg.scene.width, cfg.scene.height));
        out.by_model["unsupervised"] = e;
    }
    if (wanted("weighted_mean") && seg && cycle) {
        std::vector<BinaryMask> preds;
        for (int t = 0; t < T; ++t)
            preds.push_back(
                weighted_mean_baseline({static_soft[t], temporal_soft[t], std::nullopt}, 0.5));
        out.by_model["weighted_mean"] = score(preds);
    }
    if (wanted("fusion") && fusion && seg && cycle) {
        std::vector<BinaryMask> preds;
        for (int t = 0; t < T; ++t) {
            PredictionPair pair{static_soft[t], temporal_soft[t], std::nullopt};
            preds.push_back(threshold_mask(fuse_soft(*fusion, pair), 0.5));
        }
        out.by_model["fusion"] = score(preds);
    }
    return out;
}

std::string csv_cell(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

void write_aligned_csv(const std::string& path,
                       const std::vector<std::vector<std::string>>& rows) {
    std::vector<size_t> widths;
    for (const auto& row : rows)
        for (size_t c = 0; c < row.size(); ++c) {
            if (widths.size() <= c) widths.resize(c + 1, 0);
            widths[c] = std::max(widths[c], row[c].size());
        }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& row : rows) {
        for (size_t c = 0; c < row.size(); ++c) {
            std::string cell = row[c];
            cell.resize(widths[c], ' ');
            out << cell;
            out << (c + 1 == row.size() ? "\n" : ",");
        }
    }
}

}  // namespace

EvaluationResult run_evaluate(const ExperimentConfig& cfg,
                              const std::vector<std::string>& models,
                              bool oracle_first_frame) {
    cfg.validate();
    if (models.empty()) throw ConfigError("evaluate: no models requested");
    for (const auto& m : models)
        if (m != "segnet" && m != "unsupervised" && m != "weighted_mean" && m != "fusion")
            throw ConfigError("evaluate: unknown model '" + m + "'");
    require_dataset(cfg);

    auto wanted = [&](const std::string& m) {
        return std::find(models.begin(), models.end(), m) != models.end();
    };
    const bool need_seg = wanted("segnet") || wanted("weighted_mean") || wanted("fusion") ||
                          (!oracle_first_frame &&
                           (wanted("unsupervised") || wanted("weighted_mean")));
    const bool need_cycle =
        wanted("unsupervised") || wanted("weighted_mean") || wanted("fusion");
    const bool need_fusion = wanted("fusion");

    std::optional<SegModel> seg;
    std::optional<CycleModel> cycle;
    std::optional<FusionModel> fusion;
    if (need_seg) {
        require_file(seg_checkpoint_path(cfg), "segnet checkpoint; run `train seg` first");
        seg = load_segnet(seg_checkpoint_path(cfg));
    }
    if (need_cycle) {
        require_file(cycle_checkpoint_path(cfg), "cycle checkpoint; run `train cycle` first");
        cycle = load_cycle_model(cycle_checkpoint_path(cfg));
    }
    if (need_fusion) {
        require_file(fusion_checkpoint_path(cfg), "fusion checkpoint; run `train fusion` first");
        fusion = load_fusion_model(fusion_checkpoint_path(cfg));
    }

    const DatasetSplits splits = build_dataset(cfg);
    const int n_clips = static_cast<int>(splits.test_clips.size());
    std::vector<ClipModelEval> evals(n_clips);

    const int n_threads = std::min(evaluation_threads(), n_clips);
    std::vector<std::future<void>> workers;
    std::atomic<int> next{0};
    auto work = [&]() {
        for (int i = next.fetch_add(1); i < n_clips; i = next.fetch_add(1))
            evals[i] = evaluate_clip(cfg, splits.test_clips[i], seg ? &*seg : nullptr,
                                     cycle ? &*cycle : nullptr, fusion ? &*fusion : nullptr,
                                     models, oracle_first_frame);
    };
    if (n_threads <= 1) {
        work();
    } else {
        for (int t = 0; t < n_threads; ++t)
            workers.push_back(std::async(std::launch::async, work));
        for (auto& w : workers) w.get();
    }

    EvaluationResult result;
    for (const auto& name : models) {
        std::vector<ClipEvaluation> per_clip;
        for (const auto& e : evals) {
            auto it = e.by_model.find(name);
            if (it != e.by_model.end()) per_clip.push_back(it->second);
        }
        if (!per_clip.empty())
            result.reports[name] = build_report(name, "test", per_clip);
    }

    // Table-1-shaped CSV: every evaluated model with P and IOU.
    std::vector<std::vector<std::string>> t1{{"model", "P", "IOU"}};
    for (const auto& name : {"segnet", "unsupervised", "weighted_mean", "fusion"}) {
        auto it = result.reports.find(name);
        if (it != result.reports.end())
            t1.push_back({name, csv_cell(it->second.precision), csv_cell(it->second.iou)});
    }
    write_aligned_csv((fs::path(cfg.output_dir) / "table1.csv").string(), t1);

    // Table-2-shaped J/F CSV for the propagation model.
    auto uit = result.reports.find("unsupervised");
    if (uit != result.reports.end() && uit->second.j_mean) {
        const MetricsReport& r = uit->second;
        std::vector<std::vector<std::string>> t2{
            {"J-mean", "J-recall", "J-decay", "F-mean", "F-recall", "F-decay"},
            {csv_cell(r.j_mean.value_or(0)), csv_cell(r.j_recall.value_or(0)),
             csv_cell(r.j_decay.value_or(0)), csv_cell(r.f_mean.value_or(0)),
             csv_cell(r.f_recall.value_or(0)), csv_cell(r.f_decay.value_or(0))}};
        write_aligned_csv((fs::path(cfg.output_dir) / "table2.csv").string(), t2);
    }

    // Table-3-shaped CSV: weighted mean vs learned fusion.
    std::vector<std::vector<std::string>> t3{{"model", "P", "IOU"}};
    for (const auto& name : {"weighted_mean", "fusion"}) {
        auto it = result.reports.find(name);
        if (it != result.reports.end())
            t3.push_back({name, csv_cell(it->second.precision), csv_cell(it->second.iou)});
    }
    if (t3.size() > 1)
        write_aligned_csv((fs::path(cfg.output_dir) / "table3.csv").string(), t3);

    for (const auto& [name, report] : result.reports) {
        std::ofstream out(fs::path(cfg.output_dir) / ("report_" + name + ".json"));
        out << report_to_json(report) << "\n";
    }
    return result;
}

}  // namespace segfuse

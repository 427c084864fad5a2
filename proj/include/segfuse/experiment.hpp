#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "segfuse/cycletrack.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/segnet.hpp"
#include "segfuse/synthdata.hpp"

namespace segfuse {

struct SegTrainParams {
    int epochs = 20;
    int batch_size = 8;
    double lr = 1e-3;
};

struct CycleTrainParams {
    int steps = 500;
    double lr = 2e-4;
};

struct FusionTrainParams {
    int epochs = 12;
    int batch_size = 4;
    double lr = 3e-3;
};

// One seed governs the entire run.
struct ExperimentConfig {
    SceneConfig scene;
    int divisor = 10;  // scales the source-dataset split ratios
    int frame_stride = 5;
    // Explicit split sizes override the divisor-scaled defaults when >= 0.
    int n_train_images = -1, n_val_images = -1, n_unlabelled_clips = -1, n_test_clips = -1;

    SegNetConfig segnet;
    SegTrainParams segnet_train;
    CycleConfig cycle;
    CycleTrainParams cycle_train;
    FusionConfig fusion;
    FusionTrainParams fusion_train;

    std::uint64_t seed = 1;
    std::string output_dir = "out";

    SplitCounts counts() const;
    void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::string& path);

// Paths of pipeline artifacts under output_dir.
std::string dataset_dir(const ExperimentConfig& cfg);
std::string seg_checkpoint_path(const ExperimentConfig& cfg);
std::string cycle_checkpoint_path(const ExperimentConfig& cfg);
std::string fusion_checkpoint_path(const ExperimentConfig& cfg);

DatasetSplits build_dataset(const ExperimentConfig& cfg);

void run_generate(const ExperimentConfig& cfg, bool force);
SegTrainingHistory run_train_seg(const ExperimentConfig& cfg);
CycleTrainingHistory run_train_cycle(const ExperimentConfig& cfg);
FusionTrainingHistory run_train_fusion(const ExperimentConfig& cfg);

struct EvaluationResult {
    std::map<std::string, MetricsReport> reports;  // keyed by model name
};

// Evaluates {segnet, unsupervised, weighted_mean, fusion} (or a subset) on
// the test clips and writes table-shaped CSVs plus JSON reports.
EvaluationResult run_evaluate(const ExperimentConfig& cfg,
                              const std::vector<std::string>& models,
                              bool oracle_first_frame);

// Rebuild labelled mini-clips (frames + masks grouped by source clip) from a
// labelled image split.
struct LabelledClip {
    std::string clip_id;
    VideoClip clip;
};
std::vector<LabelledClip> group_by_clip(const std::vector<LabelledImage>& images);

// (static, temporal, gt) triples for fusion training; the temporal stream is
// anchored on the clip's ground-truth first mask, first frame excluded.
std::vector<PredictionPair> build_fusion_pairs(const SegModel& seg, const CycleModel& cycle,
                                               const std::vector<LabelledClip>& clips);

}  // namespace segfuse

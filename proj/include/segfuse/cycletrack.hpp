#pragma once

#include <cstdint>
#include <vector>

#include "segfuse/checkpoint.hpp"
#include "segfuse/image.hpp"
#include "segfuse/synthdata.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

struct CycleConfig {
    int input_size = 256;
    int patch_size = 80;
    int encoder_depth = 3;  // feature stride = 2^depth
    int base_channels = 16;
    int feature_channels = 32;
    double temperature = 0.07;
    int cycle_len = 4;
    int top_k = 5;

    int stride() const { return 1 << encoder_depth; }
    void validate() const;
};

// Shared fully-convolutional encoder plus a small localizer head regressing a
// 2-DOF translation from the affinity map.
struct CycleModel {
    CycleConfig cfg;
    std::vector<Tensor> enc_w, enc_b;
    std::vector<Tensor> loc_w, loc_b;

    std::vector<Tensor> params() const;
    std::vector<NamedTensor> named_params() const;
};

CycleModel build_cycle_model(const CycleConfig& config, std::uint64_t seed);

struct FeatureGrid {
    int channels = 0;
    int grid_h = 0;
    int grid_w = 0;
    Tensor values;  // [C, grid_h, grid_w]
};

// image: [3,H,W], H and W divisible by the encoder stride.
FeatureGrid encode_features(const CycleModel& model, const Tensor& image);

struct AffinityMatrix {
    int rows = 0;  // query positions
    int cols = 0;  // reference positions
    Tensor weights;  // [rows, cols], row-stochastic
};

AffinityMatrix affinity(const FeatureGrid& query, const FeatureGrid& reference,
                        double temperature);

struct TrackResult {
    double x = 0.0, y = 0.0;       // clamped center used for the next crop
    Tensor x_t, y_t;               // differentiable center (unclamped)
    bool clamped = false;
};

// Soft-argmax of the affinity mass plus the localizer's regressed offset.
TrackResult track_step(const CycleModel& model, const FeatureGrid& patch,
                       const FeatureGrid& target);

// Track the patch backward cycle_len frames then forward to the start; the
// loss combines return-position error (normalized by patch size) and start/end
// patch feature dissimilarity.
Tensor cycle_loss(const CycleModel& model, const std::vector<Tensor>& frames,
                  double start_x, double start_y, int cycle_len);

struct CycleTrainingHistory {
    std::vector<double> loss;           // raw per-step loss
    std::vector<double> smoothed_loss;  // exponential moving average
};

CycleTrainingHistory train_cycle(CycleModel& model, const std::vector<VideoClip>& clips,
                                 int steps, double lr, std::uint64_t seed);

// Affinity-weighted label transfer against {first frame, previous frame},
// restricted to each row's top_k weights. Frame 1 output is first_mask.
std::vector<SoftMask> propagate_labels(const CycleModel& model, const BinaryMask& first_mask,
                                       const VideoClip& clip, int top_k);

// Crop a patch-size window centred at (cx, cy), clamped inside the frame.
Tensor crop_patch(const Tensor& image, double cx, double cy, int patch_size);

void save_cycle_model(const std::string& path, const CycleModel& model, std::uint64_t seed);
CycleModel load_cycle_model(const std::string& path);

}  // namespace segfuse

#pragma once

#include <cstdint>
#include <vector>

#include "segfuse/checkpoint.hpp"
#include "segfuse/image.hpp"
#include "segfuse/synthdata.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

struct SegNetConfig {
    int base_channels = 16;
    int depth = 3;                 // encoder levels, stride 2 each
    bool skip_connections = true;  // concat encoder features into the decoder
    int input_size = 256;

    void validate() const;
};

// Mini encoder-decoder predicting per-pixel foreground logits.
struct SegModel {
    SegNetConfig cfg;
    std::vector<Tensor> enc_w, enc_b;
    std::vector<Tensor> dec_w, dec_b;
    Tensor head_w, head_b;

    std::vector<Tensor> params() const;
    std::vector<NamedTensor> named_params() const;
};

SegModel build_segnet(const SegNetConfig& config, std::uint64_t seed);

// frame: [3,H,W] with H == W == input_size; returns [H,W] logits.
Tensor forward_segment(const SegModel& model, const Tensor& frame);

SoftMask predict_soft(const SegModel& model, const Image& frame);
BinaryMask predict_mask(const SegModel& model, const Image& frame, double threshold = 0.5);

struct SegEpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_iou = 0.0;
};

struct SegTrainingHistory {
    std::vector<SegEpochRecord> epochs;
    int best_epoch = -1;  // epoch whose weights the model ends with
};

// Adam on bce_with_logits; retains the best-validation-IoU weights.
SegTrainingHistory train_segnet(SegModel& model, const std::vector<LabelledImage>& train,
                                const std::vector<LabelledImage>& val, int epochs,
                                int batch_size, double lr, std::uint64_t seed);

void save_segnet(const std::string& path, const SegModel& model, std::uint64_t seed);
SegModel load_segnet(const std::string& path);

}  // namespace segfuse

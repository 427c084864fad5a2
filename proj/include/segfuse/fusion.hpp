#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "segfuse/checkpoint.hpp"
#include "segfuse/image.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

struct FusionConfig {
    int token_dim = 32;
    int n_heads = 2;
    int n_layers = 2;
    int token_grid = 16;  // tokens per side
    int mask_size = 256;

    int patch_px() const { return mask_size / token_grid; }
    int tokens_per_modality() const { return token_grid * token_grid; }
    void validate() const;
};

// Static prediction, temporally propagated prediction, and (for training)
// the ground-truth mask, all spatially aligned.
struct PredictionPair {
    SoftMask static_pred;
    SoftMask temporal_pred;
    std::optional<BinaryMask> gt;
};

struct AttentionBlock {
    Tensor wq, wk, wv, wo;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor ff1_w, ff1_b, ff2_w, ff2_b;
};

struct FusionModel {
    FusionConfig cfg;
    Tensor proj_static, proj_temporal;  // conv1d kernels [D, patch^2, 1]
    Tensor emb_static, emb_temporal;    // learned modality embeddings [D]
    std::vector<AttentionBlock> blocks;
    Tensor head_w, head_b;  // per-token logit-patch head

    std::vector<Tensor> params() const;
    std::vector<NamedTensor> named_params() const;
};

FusionModel build_fusion_model(const FusionConfig& config, std::uint64_t seed);

// Patch-tokenize both predictions, project each to token_dim with a
// kernel-size-1 conv1d, add modality embeddings, concatenate: [2N, D].
Tensor tokenize(const FusionModel& model, const PredictionPair& pair);

// Fixed sinusoidal encoding of (row, col, modality); added once.
Tensor positional_encode(const FusionConfig& cfg, const Tensor& tokens);

Tensor self_attention_block(const AttentionBlock& block, int n_heads, const Tensor& tokens);

// Full-resolution fused logit map [S,S].
Tensor fuse(const FusionModel& model, const PredictionPair& pair);

SoftMask fuse_soft(const FusionModel& model, const PredictionPair& pair);

struct FusionEpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
};

struct FusionTrainingHistory {
    std::vector<FusionEpochRecord> epochs;
};

FusionTrainingHistory train_fusion(FusionModel& model, const std::vector<PredictionPair>& pairs,
                                   int epochs, int batch_size, double lr, std::uint64_t seed);

// Pixelwise alpha*static + (1-alpha)*temporal, thresholded at 0.5.
BinaryMask weighted_mean_baseline(const PredictionPair& pair, double alpha = 0.5);

void save_fusion_model(const std::string& path, const FusionModel& model, std::uint64_t seed);
FusionModel load_fusion_model(const std::string& path);

}  // namespace segfuse

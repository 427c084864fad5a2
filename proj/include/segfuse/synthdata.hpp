#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segfuse/image.hpp"
#include "segfuse/rng.hpp"

namespace segfuse {

// Synthetic "citrus orchard" scene: orange fruit disks drifting over a
// textured green background, partly hidden by dark leaf-shaped occluders.
struct SceneConfig {
    int width = 256;
    int height = 256;
    int n_fruits = 3;               // must lie in [1,6]
    double fruit_radius_min = 18.0;
    double fruit_radius_max = 34.0;
    double occluder_density = 0.3;  // [0,1]
    double motion_amplitude = 2.0;  // max px displacement per frame
    double lighting_drift = 0.1;    // multiplicative brightness range
    int clip_length = 30;
    std::uint64_t seed = 0;

    void validate() const;
};

struct VideoClip {
    std::vector<Image> frames;
    std::vector<BinaryMask> gt_masks;  // empty for unlabelled clips
    int frame_rate = 30;
};

VideoClip generate_clip(const SceneConfig& config);

struct LabelledImage {
    Image frame;
    BinaryMask mask;
    std::string clip_id;
    int frame_index = 0;
};

struct DatasetSplits {
    std::vector<LabelledImage> train;
    std::vector<LabelledImage> val;
    std::vector<VideoClip> unlabelled_clips;
    std::vector<VideoClip> test_clips;  // keep gt for evaluation
    std::vector<std::string> train_clip_ids;
    std::vector<std::string> val_clip_ids;
    std::vector<std::string> unlabelled_clip_ids;
    std::vector<std::string> test_clip_ids;
    int frame_stride = 5;
};

DatasetSplits generate_dataset(const SceneConfig& config, int n_train_images,
                               int n_val_images, int n_unlabelled_clips, int n_test_clips,
                               int frame_stride = 5);

// Split sizes mirroring the source dataset ratios (1200/313/240/20), scaled
// down by `divisor` (floor, at least 1 each).
struct SplitCounts {
    int n_train_images;
    int n_val_images;
    int n_unlabelled_clips;
    int n_test_clips;
};
SplitCounts source_split_counts(int divisor);

// Directory layout: <root>/<split>/<clip_id>/frame_%05d.png (+ mask_%05d.png
// for labelled splits), plus a manifest.json listing splits, ids and seeds.
void write_dataset(const std::string& root, const DatasetSplits& splits,
                   const SceneConfig& config);

}  // namespace segfuse

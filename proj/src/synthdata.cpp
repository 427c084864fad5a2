#include "segfuse/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace segfuse {

void SceneConfig::validate() const {
    if (width < 16 || height < 16) throw ConfigError("image size must be at least 16x16");
    if (n_fruits < 1 || n_fruits > 6)
        throw ConfigError("n_fruits " + std::to_string(n_fruits) + " outside [1,6]");
    if (fruit_radius_min <= 0 || fruit_radius_max < fruit_radius_min)
        throw ConfigError("empty fruit radius range");
    if (2.0 * (fruit_radius_max + 1.0) > std::min(width, height))
        throw ConfigError("fruit radius " + std::to_string(fruit_radius_max) +
                          " does not fit inside " + std::to_string(width) + "x" +
                          std::to_string(height) + " image");
    if (occluder_density < 0 || occluder_density > 1)
        throw ConfigError("occluder_density outside [0,1]");
    if (motion_amplitude < 0) throw ConfigError("motion_amplitude must be non-negative");
    if (lighting_drift < 0 || lighting_drift >= 1)
        throw ConfigError("lighting_drift outside [0,1)");
    if (clip_length < 2) throw ConfigError("clip_length must be at least 2");
}

namespace {

inline std::uint8_t clamp8(double v) {
    return static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, v)));
}

struct Fruit {
    double base_x, base_y;
    double radius;
    double amp_x, amp_y;      // sinusoid amplitude (px)
    double omega_x, omega_y;  // rad/frame
    double phase_x, phase_y;
    double drift_x, drift_y;  // px/frame
    double hue_shift;         // per-fruit color variation

    void center(int t, double& cx, double& cy) const {
        cx = base_x + amp_x * std::sin(omega_x * t + phase_x) + drift_x * t;
        cy = base_y + amp_y * std::sin(omega_y * t + phase_y) + drift_y * t;
    }
};

struct Occluder {
    double cx, cy;
    double ax, ay;    // semi-axes
    double angle;
    double shade;

    bool contains(double x, double y) const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double dx = x - cx, dy = y - cy;
        const double u = (c * dx + s * dy) / ax;
        const double v = (-s * dx + c * dy) / ay;
        return u * u + v * v <= 1.0;
    }
};

}  // namespace

VideoClip generate_clip(const SceneConfig& config) {
    config.validate();
    Rng rng(config.seed ^ 0x5eedc11fULL);

    const int w = config.width, h = config.height;

    // Static textured background: base green plus value noise and a couple
    // of low-frequency brightness waves.
    Image background{w, h, std::vector<std::uint8_t>(static_cast<size_t>(w) * h * 3)};
    const double wave_fx = rng.uniform(0.5, 2.0), wave_fy = rng.uniform(0.5, 2.0);
    const double wave_px = rng.uniform(0.0, 6.28), wave_py = rng.uniform(0.0, 6.28);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double wave = 14.0 * std::sin(2.0 * M_PI * wave_fx * x / w + wave_px) *
                                std::sin(2.0 * M_PI * wave_fy * y / h + wave_py);
            const double noise = rng.uniform(-18.0, 18.0);
            background.at(x, y, 0) = clamp8(38.0 + 0.4 * noise + 0.3 * wave);
            background.at(x, y, 1) = clamp8(92.0 + noise + wave);
            background.at(x, y, 2) = clamp8(34.0 + 0.35 * noise + 0.3 * wave);
        }

    std::vector<Fruit> fruits(config.n_fruits);
    for (auto& f : fruits) {
        f.radius = rng.uniform(config.fruit_radius_min, config.fruit_radius_max);
        f.hue_shift = rng.uniform(-18.0, 18.0);
        if (config.motion_amplitude > 0) {
            // Per-axis speed budget; 1/sqrt(2) keeps the Euclidean step within
            // motion_amplitude.
            const double budget = config.motion_amplitude / std::sqrt(2.0);
            const double split_x = rng.uniform(0.4, 0.9);
            const double split_y = rng.uniform(0.4, 0.9);
            f.omega_x = rng.uniform(0.1, 0.45);
            f.omega_y = rng.uniform(0.1, 0.45);
            f.amp_x = budget * split_x / f.omega_x;
            f.amp_y = budget * split_y / f.omega_y;
            f.drift_x = budget * (1.0 - split_x) * rng.uniform(-1.0, 1.0);
            f.drift_y = budget * (1.0 - split_y) * rng.uniform(-1.0, 1.0);
        } else {
            f.amp_x = f.amp_y = f.omega_x = f.omega_y = f.drift_x = f.drift_y = 0.0;
        }
        f.phase_x = rng.uniform(0.0, 6.28);
        f.phase_y = rng.uniform(0.0, 6.28);
        // Reach of the trajectory over the whole clip, so the disk stays inside.
        // The disk itself must fit; the trajectory is shrunk to the remaining
        // room when an unlucky amplitude/drift draw would leave the frame.
        const double room_x = (w - 1 - 2.0 * f.radius) / 2.0;
        const double room_y = (h - 1 - 2.0 * f.radius) / 2.0;
        if (room_x < 0.0 || room_y < 0.0)
            throw ConfigError("fruit with radius " + std::to_string(f.radius) +
                              " cannot fit inside the frame");
        double reach_x = f.amp_x + std::abs(f.drift_x) * config.clip_length;
        double reach_y = f.amp_y + std::abs(f.drift_y) * config.clip_length;
        if (reach_x > room_x) {
            const double k = room_x / reach_x;
            f.amp_x *= k;
            f.drift_x *= k;
            reach_x = room_x;
        }
        if (reach_y > room_y) {
            const double k = room_y / reach_y;
            f.amp_y *= k;
            f.drift_y *= k;
            reach_y = room_y;
        }
        const double lo_x = f.radius + reach_x, hi_x = w - 1 - f.radius - reach_x;
        const double lo_y = f.radius + reach_y, hi_y = h - 1 - f.radius - reach_y;
        f.base_x = rng.uniform(lo_x, hi_x);
        f.base_y = rng.uniform(lo_y, hi_y);
    }

    const int n_occluders = static_cast<int>(std::lround(config.occluder_density * 14.0));
    std::vector<Occluder> occluders(n_occluders);
    for (auto& o : occluders) {
        o.cx = rng.uniform(0.0, w - 1.0);
        o.cy = rng.uniform(0.0, h - 1.0);
        o.ax = rng.uniform(w / 24.0, w / 9.0);
        o.ay = rng.uniform(h / 30.0, h / 14.0);
        o.angle = rng.uniform(0.0, M_PI);
        o.shade = rng.uniform(0.7, 1.1);
    }

    const double light_phase = rng.uniform(0.0, 6.28);

    VideoClip clip;
    clip.frames.reserve(config.clip_length);
    clip.gt_masks.reserve(config.clip_length);
    for (int t = 0; t < config.clip_length; ++t) {
        Image frame = background;
        BinaryMask mask{w, h, std::vector<std::uint8_t>(static_cast<size_t>(w) * h, 0)};

        for (const auto& f : fruits) {
            double cx, cy;
            f.center(t, cx, cy);
            const int x0 = std::max(0, static_cast<int>(std::floor(cx - f.radius)));
            const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + f.radius)));
            const int y0 = std::max(0, static_cast<int>(std::floor(cy - f.radius)));
            const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + f.radius)));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double d = std::hypot(x - cx, y - cy);
                    if (d > f.radius) continue;
                    const double g = d / f.radius;  // 0 center .. 1 rim
                    frame.at(x, y, 0) = clamp8(250.0 - 55.0 * g + f.hue_shift);
                    frame.at(x, y, 1) = clamp8(160.0 - 75.0 * g + 0.5 * f.hue_shift);
                    frame.at(x, y, 2) = clamp8(45.0 - 30.0 * g);
                    mask.at(x, y) = 1;
                }
        }

        for (const auto& o : occluders) {
            const int x0 = std::max(0, static_cast<int>(std::floor(o.cx - std::max(o.ax, o.ay))));
            const int x1 = std::min(w - 1, static_cast<int>(std::ceil(o.cx + std::max(o.ax, o.ay))));
            const int y0 = std::max(0, static_cast<int>(std::floor(o.cy - std::max(o.ax, o.ay))));
            const int y1 = std::min(h - 1, static_cast<int>(std::ceil(o.cy + std::max(o.ax, o.ay))));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    if (!o.contains(x, y)) continue;
                    frame.at(x, y, 0) = clamp8(22.0 * o.shade);
                    frame.at(x, y, 1) = clamp8(58.0 * o.shade);
                    frame.at(x, y, 2) = clamp8(24.0 * o.shade);
                    mask.at(x, y) = 0;  // occluded fruit is not annotated
                }
        }

        if (config.lighting_drift > 0) {
            const double b =
                1.0 + config.lighting_drift *
                          std::sin(2.0 * M_PI * t / config.clip_length + light_phase);
            for (auto& px : frame.pixels) px = clamp8(px * b);
        }

        clip.frames.push_back(std::move(frame));
        clip.gt_masks.push_back(std::move(mask));
    }
    return clip;
}

SplitCounts source_split_counts(int divisor) {
    if (divisor < 1) throw ConfigError("split divisor must be positive");
    return SplitCounts{std::max(1, 1200 / divisor), std::max(1, 313 / divisor),
                       std::max(1, 240 / divisor), std::max(1, 20 / divisor)};
}

namespace {

// Sample labelled images every `stride` frames from freshly generated clips.
void fill_labelled_split(const SceneConfig& config, Rng& seeder, const std::string& prefix,
                         int n_images, int stride, std::vector<LabelledImage>& out,
                         std::vector<std::string>& ids) {
    int clip_no = 0;
    while (static_cast<int>(out.size()) < n_images) {
        SceneConfig c = config;
        c.seed = seeder.next_u64();
        const std::string id = prefix + "_" + std::to_string(clip_no++);
        VideoClip clip = generate_clip(c);
        ids.push_back(id);
        for (int t = 0; t < static_cast<int>(clip.frames.size()); t += stride) {
            if (static_cast<int>(out.size()) >= n_images) break;
            out.push_back(LabelledImage{std::move(clip.frames[t]), std::move(clip.gt_masks[t]),
                                        id, t});
        }
    }
}

}  // namespace

DatasetSplits generate_dataset(const SceneConfig& config, int n_train_images,
                               int n_val_images, int n_unlabelled_clips, int n_test_clips,
                               int frame_stride) {
    config.validate();
    if (n_train_images < 1 || n_val_images < 1 || n_unlabelled_clips < 1 || n_test_clips < 1)
        throw ConfigError("all split counts must be positive");
    if (frame_stride < 1) throw ConfigError("frame_stride must be positive");

    DatasetSplits splits;
    splits.frame_stride = frame_stride;
    Rng seeder(config.seed);

    fill_labelled_split(config, seeder, "train", n_train_images, frame_stride, splits.train,
                        splits.train_clip_ids);
    fill_labelled_split(config, seeder, "val", n_val_images, frame_stride, splits.val,
                        splits.val_clip_ids);
    for (int i = 0; i < n_unlabelled_clips; ++i) {
        SceneConfig c = config;
        c.seed = seeder.next_u64();
        VideoClip clip = generate_clip(c);
        clip.gt_masks.clear();
        splits.unlabelled_clips.push_back(std::move(clip));
        splits.unlabelled_clip_ids.push_back("unlabelled_" + std::to_string(i));
    }
    for (int i = 0; i < n_test_clips; ++i) {
        SceneConfig c = config;
        c.seed = seeder.next_u64();
        splits.test_clips.push_back(generate_clip(c));
        splits.test_clip_ids.push_back("test_" + std::to_string(i));
    }
    return splits;
}

namespace {

std::string frame_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05d.png", index);
    return buf;
}

std::string mask_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "mask_%05d.png", index);
    return buf;
}

}  // namespace

void write_dataset(const std::string& root, const DatasetSplits& splits,
                   const SceneConfig& config) {
    nlohmann::json manifest;
    manifest["frame_stride"] = splits.frame_stride;
    manifest["scene"] = {{"width", config.width},
                         {"height", config.height},
                         {"n_fruits", config.n_fruits},
                         {"fruit_radius_min", config.fruit_radius_min},
                         {"fruit_radius_max", config.fruit_radius_max},
                         {"occluder_density", config.occluder_density},
                         {"motion_amplitude", config.motion_amplitude},
                         {"lighting_drift", config.lighting_drift},
                         {"clip_length", config.clip_length},
                         {"seed", config.seed}};

    auto write_labelled = [&](const std::string& split, const std::vector<LabelledImage>& imgs,
                              const std::vector<std::string>& ids) {
        nlohmann::json clips = nlohmann::json::array();
        for (const auto& id : ids) {
            nlohmann::json entry;
            entry["clip_id"] = id;
            nlohmann::json frames = nlohmann::json::array();
            const fs::path dir = fs::path(root) / split / id;
            fs::create_directories(dir);
            for (const auto& img : imgs) {
                if (img.clip_id != id) continue;
                write_png_rgb((dir / frame_name(img.frame_index)).string(), img.frame);
                write_mask_png((dir / mask_name(img.frame_index)).string(), img.mask);
                frames.push_back(img.frame_index);
            }
            entry["frames"] = frames;
            clips.push_back(entry);
        }
        manifest["splits"][split] = clips;
    };

    auto write_clips = [&](const std::string& split, const std::vector<VideoClip>& clips,
                           const std::vector<std::string>& ids) {
        nlohmann::json jclips = nlohmann::json::array();
        for (size_t i = 0; i < clips.size(); ++i) {
            nlohmann::json entry;
            entry["clip_id"] = ids[i];
            entry["n_frames"] = clips[i].frames.size();
            entry["labelled"] = !clips[i].gt_masks.empty();
            const fs::path dir = fs::path(root) / split / ids[i];
            fs::create_directories(dir);
            for (size_t t = 0; t < clips[i].frames.size(); ++t) {
                write_png_rgb((dir / frame_name(static_cast<int>(t))).string(),
                              clips[i].frames[t]);
                if (!clips[i].gt_masks.empty())
                    write_mask_png((dir / mask_name(static_cast<int>(t))).string(),
                                   clips[i].gt_masks[t]);
            }
            jclips.push_back(entry);
        }
        manifest["splits"][split] = jclips;
    };

    fs::create_directories(root);
    write_labelled("train", splits.train, splits.train_clip_ids);
    write_labelled("val", splits.val, splits.val_clip_ids);
    write_clips("unlabelled", splits.unlabelled_clips, splits.unlabelled_clip_ids);
    write_clips("test", splits.test_clips, splits.test_clip_ids);

    std::ofstream out(fs::path(root) / "manifest.json");
    if (!out) throw IoError("cannot write manifest under " + root);
    out << manifest.dump(2) << "\n";
}

}  // namespace segfuse

#include "segfuse/cycletrack.hpp"

#include "segfuse/optim.hpp"

#include <algorithm>
#include <cmath>

namespace segfuse {

void CycleConfig::validate() const {
    if (encoder_depth < 1 || encoder_depth > 5)
        throw ConfigError("encoder_depth must lie in [1,5]");
    if (base_channels < 1 || feature_channels < 1)
        throw ConfigError("channel counts must be positive");
    if (input_size % stride() != 0)
        throw ConfigError("input_size " + std::to_string(input_size) +
                          " not divisible by stride " + std::to_string(stride()));
    if (patch_size % stride() != 0)
        throw ConfigError("patch_size " + std::to_string(patch_size) +
                          " not divisible by stride " + std::to_string(stride()));
    if (patch_size > input_size) throw ConfigError("patch_size exceeds input_size");
    if (temperature <= 0) throw ConfigError("temperature must be positive");
    if (cycle_len < 0) throw ConfigError("cycle_len must be non-negative");
    if (top_k < 1) throw ConfigError("top_k must be positive");
}

namespace {

Tensor he_conv(Rng& rng, int cout, int cin, int k) {
    const double std = std::sqrt(2.0 / (cin * k * k));
    Tensor t({cout, cin, k, k}, 0.0, true);
    for (auto& v : t.data()) v = rng.normal() * std;
    return t;
}

}  // namespace

std::vector<Tensor> CycleModel::params() const {
    std::vector<Tensor> out;
    for (auto& t : enc_w) out.push_back(t);
    for (auto& t : enc_b) out.push_back(t);
    for (auto& t : loc_w) out.push_back(t);
    for (auto& t : loc_b) out.push_back(t);
    return out;
}

std::vector<NamedTensor> CycleModel::named_params() const {
    std::vector<NamedTensor> out;
    for (size_t i = 0; i < enc_w.size(); ++i) {
        out.push_back({"enc" + std::to_string(i) + ".w", enc_w[i]});
        out.push_back({"enc" + std::to_string(i) + ".b", enc_b[i]});
    }
    for (size_t i = 0; i < loc_w.size(); ++i) {
        out.push_back({"loc" + std::to_string(i) + ".w", loc_w[i]});
        out.push_back({"loc" + std::to_string(i) + ".b", loc_b[i]});
    }
    return out;
}

CycleModel build_cycle_model(const CycleConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed ^ 0xc9c1e7ULL);
    CycleModel m;
    m.cfg = config;
    int cin = 3;
    for (int level = 0; level < config.encoder_depth; ++level) {
        const int cout = level == config.encoder_depth - 1
                             ? config.feature_channels
                             : config.base_channels << std::min(level, 2);
        m.enc_w.push_back(he_conv(rng, cout, cin, 3));
        // Small positive bias keeps relu units alive on low-contrast regions;
        // fully dead cells would otherwise emit zero features that break
        // cosine matching.
        const bool last = level == config.encoder_depth - 1;
        m.enc_b.push_back(Tensor({cout, 1, 1}, last ? 0.0 : 0.1, true));
        cin = cout;
    }
    // Localizer: affinity mass map -> 2-DOF translation.
    m.loc_w.push_back(he_conv(rng, 8, 1, 3));
    m.loc_b.push_back(Tensor({8, 1, 1}, 0.0, true));
    m.loc_w.push_back(he_conv(rng, 2, 8, 3));
    m.loc_b.push_back(Tensor({2, 1, 1}, 0.0, true));
    return m;
}

FeatureGrid encode_features(const CycleModel& model, const Tensor& image) {
    if (image.ndim() != 3 || image.shape()[0] != 3)
        throw ShapeError("encode_features expects [3,H,W], got " + shape_str(image.shape()));
    const int s = model.cfg.stride();
    if (image.shape()[1] % s != 0 || image.shape()[2] % s != 0)
        throw ShapeError("encode_features: spatial size " + shape_str(image.shape()) +
                         " not divisible by stride " + std::to_string(s));
    Tensor x = image;
    for (size_t level = 0; level < model.enc_w.size(); ++level) {
        x = add(conv2d(x, model.enc_w[level], 2, 1), model.enc_b[level]);
        // The final feature map stays linear: signed features keep cosine
        // matching discriminative (a relu head can zero out whole cells).
        if (level + 1 < model.enc_w.size()) x = relu(x);
    }
    FeatureGrid g;
    g.channels = x.shape()[0];
    g.grid_h = x.shape()[1];
    g.grid_w = x.shape()[2];
    g.values = x;
    return g;
}

AffinityMatrix affinity(const FeatureGrid& query, const FeatureGrid& reference,
                        double temperature) {
    if (query.channels != reference.channels)
        throw ShapeError("affinity channel mismatch: " + std::to_string(query.channels) +
                         " vs " + std::to_string(reference.channels));
    const int n = query.grid_h * query.grid_w;
    const int m = reference.grid_h * reference.grid_w;
    Tensor q = l2_normalize(transpose(reshape(query.values, {query.channels, n})), 1);
    Tensor r = l2_normalize(transpose(reshape(reference.values, {reference.channels, m})), 1);
    Tensor sims = matmul(q, transpose(r));
    AffinityMatrix out;
    out.rows = n;
    out.cols = m;
    out.weights = softmax(sims, 1, temperature);
    return out;
}

TrackResult track_step(const CycleModel& model, const FeatureGrid& patch,
                       const FeatureGrid& target) {
    const AffinityMatrix aff = affinity(patch, target, model.cfg.temperature);
    const int n = aff.rows, m = aff.cols;
    // Affinity mass over target cells: mean of the rows.
    Tensor ones_row({1, n}, 1.0 / n);
    Tensor dist = matmul(ones_row, aff.weights);  // [1, M]

    // Soft-argmax over target cell centres (pixel units).
    const int s = model.cfg.stride();
    Tensor coords({m, 2}, 0.0);
    for (int gy = 0; gy < target.grid_h; ++gy)
        for (int gx = 0; gx < target.grid_w; ++gx) {
            const int i = gy * target.grid_w + gx;
            coords.data()[2 * i] = (gx + 0.5) * s;
            coords.data()[2 * i + 1] = (gy + 0.5) * s;
        }
    Tensor expected = matmul(dist, coords);  // [1,2]

    // Localizer offset from the mass map.
    Tensor map = reshape(dist, {1, target.grid_h, target.grid_w});
    Tensor h = relu(add(conv2d(map, model.loc_w[0], 1, 1), model.loc_b[0]));
    Tensor o = add(conv2d(h, model.loc_w[1], 1, 1), model.loc_b[1]);  // [2,h,w]
    Tensor pooled = matmul(reshape(o, {2, target.grid_h * target.grid_w}),
                           Tensor({target.grid_h * target.grid_w, 1},
                                  1.0 / (target.grid_h * target.grid_w)));  // [2,1]

    Tensor center = add(expected, reshape(transpose(pooled), {1, 2}));
    TrackResult res;
    res.x_t = reshape(slice(center, 1, 0, 1), {1});
    res.y_t = reshape(slice(center, 1, 1, 1), {1});

    const double half = model.cfg.patch_size / 2.0;
    const double max_x = target.grid_w * s - half;
    const double max_y = target.grid_h * s - half;
    res.x = std::min(max_x, std::max(half, res.x_t.value()));
    res.y = std::min(max_y, std::max(half, res.y_t.value()));
    res.clamped = res.x != res.x_t.value() || res.y != res.y_t.value();
    return res;
}

Tensor crop_patch(const Tensor& image, double cx, double cy, int patch_size) {
    const int h = image.shape()[1], w = image.shape()[2];
    if (patch_size > h || patch_size > w)
        throw ShapeError("crop_patch: patch larger than frame");
    int x0 = static_cast<int>(std::lround(cx)) - patch_size / 2;
    int y0 = static_cast<int>(std::lround(cy)) - patch_size / 2;
    x0 = std::min(w - patch_size, std::max(0, x0));
    y0 = std::min(h - patch_size, std::max(0, y0));
    Tensor rows = slice(image, 1, y0, patch_size);
    return slice(rows, 2, x0, patch_size);
}

namespace {

// Mean-pooled, L2-normalized patch descriptor: [1, C].
Tensor pooled_descriptor(const FeatureGrid& g) {
    const int m = g.grid_h * g.grid_w;
    Tensor flat = reshape(g.values, {g.channels, m});
    Tensor pooled = matmul(flat, Tensor({m, 1}, 1.0 / m));  // [C,1]
    return l2_normalize(transpose(pooled), 1);
}

}  // namespace

Tensor cycle_loss(const CycleModel& model, const std::vector<Tensor>& frames,
                  double start_x, double start_y, int cycle_len) {
    if (cycle_len == 0) return Tensor::scalar(0.0);
    if (static_cast<int>(frames.size()) < cycle_len + 1)
        throw ConfigError("cycle_loss: window of " + std::to_string(frames.size()) +
                          " frames too short for cycle_len " + std::to_string(cycle_len));
    const int t0 = static_cast<int>(frames.size()) - 1;

    FeatureGrid start_patch =
        encode_features(model, crop_patch(frames[t0], start_x, start_y, model.cfg.patch_size));
    Tensor start_desc = pooled_descriptor(start_patch);

    // Backward to t0 - cycle_len, then forward back to t0.
    std::vector<int> route;
    for (int t = t0 - 1; t >= t0 - cycle_len; --t) route.push_back(t);
    for (int t = t0 - cycle_len + 1; t <= t0; ++t) route.push_back(t);

    FeatureGrid patch = start_patch;
    double cx = start_x, cy = start_y;
    TrackResult last;
    for (int t : route) {
        const FeatureGrid target = encode_features(model, frames[t]);
        last = track_step(model, patch, target);
        cx = last.x;
        cy = last.y;
        patch = encode_features(model, crop_patch(frames[t], cx, cy, model.cfg.patch_size));
    }

    // Return-position error, in patch-size units.
    Tensor dx = add_const(last.x_t, -start_x);
    Tensor dy = add_const(last.y_t, -start_y);
    Tensor pos = scale(add(mul(dx, dx), mul(dy, dy)),
                       1.0 / (static_cast<double>(model.cfg.patch_size) * model.cfg.patch_size));

    // Feature dissimilarity between start and returned patch.
    Tensor end_desc = pooled_descriptor(patch);
    Tensor cos = sum(mul(start_desc, end_desc));
    Tensor feat = add_const(scale(cos, -1.0), 1.0);

    return add(pos, feat);
}

CycleTrainingHistory train_cycle(CycleModel& model, const std::vector<VideoClip>& clips,
                                 int steps, double lr, std::uint64_t seed) {
    if (clips.empty()) throw ConfigError("train_cycle: empty clip set");
    CycleTrainingHistory history;
    if (steps == 0) return history;

    auto params = model.params();
    Optimizer opt(Optimizer::Kind::SGD, lr);
    Rng rng(seed ^ 0xc1c1e0ULL);

    const int cl = model.cfg.cycle_len;
    const double half = model.cfg.patch_size / 2.0;
    double ema = 0.0;
    for (int step = 0; step < steps; ++step) {
        const VideoClip& clip = clips[rng.randint(clips.size())];
        const int len = static_cast<int>(clip.frames.size());
        const int window = std::min(len, cl + 1);
        const int start = static_cast<int>(rng.randint(len - window + 1));
        std::vector<Tensor> frames;
        for (int t = start; t < start + window; ++t)
            frames.push_back(image_to_tensor(clip.frames[t]));
        const double cx = rng.uniform(half, clip.frames[0].width - half);
        const double cy = rng.uniform(half, clip.frames[0].height - half);

        Tensor loss = cycle_loss(model, frames, cx, cy, window - 1);
        backward(loss);
        opt.step(params);

        const double v = loss.value();
        history.loss.push_back(v);
        ema = step == 0 ? v : 0.98 * ema + 0.02 * v;
        history.smoothed_loss.push_back(ema);
    }
    return history;
}

std::vector<SoftMask> propagate_labels(const CycleModel& model, const BinaryMask& first_mask,
                                       const VideoClip& clip, int top_k) {
    if (clip.frames.empty()) throw ConfigError("propagate_labels: empty clip");
    const int w = clip.frames[0].width, h = clip.frames[0].height;
    if (first_mask.width != w || first_mask.height != h)
        throw ShapeError("propagate_labels: first mask " + std::to_string(first_mask.width) +
                         "x" + std::to_string(first_mask.height) + " does not match frames " +
                         std::to_string(w) + "x" + std::to_string(h));
    if (top_k < 1) throw ConfigError("propagate_labels: top_k must be positive");
    const int s = model.cfg.stride();
    const int gw = w / s, gh = h / s;
    const int m = gw * gh;

    // Per-frame L2-normalized cell features, plain buffers (inference only).
    const int T = static_cast<int>(clip.frames.size());
    std::vector<std::vector<double>> feats(T);  // [m][C] flattened
    int channels = 0;
    for (int t = 0; t < T; ++t) {
        FeatureGrid g = encode_features(model, image_to_tensor(clip.frames[t]));
        channels = g.channels;
        feats[t].assign(static_cast<size_t>(m) * channels, 0.0);
        const auto& d = g.values.data();
        for (int cell = 0; cell < m; ++cell) {
            double norm = 0.0;
            for (int c = 0; c < channels; ++c) {
                const double v = d[static_cast<size_t>(c) * m + cell];
                feats[t][static_cast<size_t>(cell) * channels + c] = v;
                norm += v * v;
            }
            norm = std::sqrt(norm);
            if (norm >= 1e-8)
                for (int c = 0; c < channels; ++c)
                    feats[t][static_cast<size_t>(cell) * channels + c] /= norm;
        }
    }

    // Downsample the first mask to grid coverage.
    std::vector<double> label0(m, 0.0);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            double acc = 0.0;
            for (int yy = gy * s; yy < (gy + 1) * s; ++yy)
                for (int xx = gx * s; xx < (gx + 1) * s; ++xx)
                    acc += first_mask.at(xx, yy) ? 1.0 : 0.0;
            label0[gy * gw + gx] = acc / (s * s);
        }

    auto upsample = [&](const std::vector<double>& grid) {
        SoftMask out{w, h, std::vector<double>(static_cast<size_t>(w) * h, 0.0)};
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double fx = (x + 0.5) / s - 0.5;
                const double fy = (y + 0.5) / s - 0.5;
                const int x0 = std::max(0, std::min(gw - 1, static_cast<int>(std::floor(fx))));
                const int y0 = std::max(0, std::min(gh - 1, static_cast<int>(std::floor(fy))));
                const int x1 = std::min(gw - 1, x0 + 1);
                const int y1 = std::min(gh - 1, y0 + 1);
                const double ax = std::min(1.0, std::max(0.0, fx - x0));
                const double ay = std::min(1.0, std::max(0.0, fy - y0));
                const double v = (1 - ay) * ((1 - ax) * grid[y0 * gw + x0] +
                                             ax * grid[y0 * gw + x1]) +
                                 ay * ((1 - ax) * grid[y1 * gw + x0] + ax * grid[y1 * gw + x1]);
                out.at(x, y) = v;
            }
        return out;
    };

    std::vector<SoftMask> out;
    out.reserve(T);
    out.push_back(soft_from_binary(first_mask));  // frame 1 is given
    std::vector<double> prev = label0;

    const double tau = model.cfg.temperature;
    std::vector<std::pair<double, int>> scored(2 * m);
    for (int t = 1; t < T; ++t) {
        std::vector<double> cur(m, 0.0);
        for (int cell = 0; cell < m; ++cell) {
            const double* q = &feats[t][static_cast<size_t>(cell) * channels];
            double mx = -1e300;
            for (int j = 0; j < 2 * m; ++j) {
                const int ref_t = j < m ? 0 : t - 1;
                const double* r = &feats[ref_t][static_cast<size_t>(j % m) * channels];
                double dot = 0.0;
                for (int c = 0; c < channels; ++c) dot += q[c] * r[c];
                scored[j] = {dot / tau, j};
                mx = std::max(mx, scored[j].first);
            }
            const int k = std::min(top_k, 2 * m);
            std::partial_sort(scored.begin(), scored.begin() + k, scored.end(),
                              [](const auto& a, const auto& b) { return a.first > b.first; });
            double z = 0.0, acc = 0.0;
            for (int j = 0; j < k; ++j) {
                const double e = std::exp(scored[j].first - mx);
                const int col = scored[j].second;
                const double label = col < m ? label0[col] : prev[col % m];
                z += e;
                acc += e * label;
            }
            cur[cell] = acc / z;
        }
        out.push_back(upsample(cur));
        prev = std::move(cur);
    }
    return out;
}

void save_cycle_model(const std::string& path, const CycleModel& model, std::uint64_t seed) {
    nlohmann::json topo;
    topo["kind"] = "cycle";
    topo["input_size"] = model.cfg.input_size;
    topo["patch_size"] = model.cfg.patch_size;
    topo["encoder_depth"] = model.cfg.encoder_depth;
    topo["base_channels"] = model.cfg.base_channels;
    topo["feature_channels"] = model.cfg.feature_channels;
    topo["temperature"] = model.cfg.temperature;
    topo["cycle_len"] = model.cfg.cycle_len;
    topo["top_k"] = model.cfg.top_k;
    save_checkpoint(path, topo, model.named_params(), seed);
}

CycleModel load_cycle_model(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.topology.value("kind", "") != "cycle")
        throw IoError("not a cycle checkpoint: " + path);
    CycleConfig cfg;
    cfg.input_size = ck.topology.at("input_size");
    cfg.patch_size = ck.topology.at("patch_size");
    cfg.encoder_depth = ck.topology.at("encoder_depth");
    cfg.base_channels = ck.topology.at("base_channels");
    cfg.feature_channels = ck.topology.at("feature_channels");
    cfg.temperature = ck.topology.at("temperature");
    cfg.cycle_len = ck.topology.at("cycle_len");
    cfg.top_k = ck.topology.at("top_k");
    CycleModel m = build_cycle_model(cfg, ck.seed);
    for (auto& np : m.named_params()) {
        auto it = ck.params.find(np.name);
        if (it == ck.params.end()) throw IoError("checkpoint missing parameter " + np.name);
        np.tensor.data() = it->second.data();
    }
    return m;
}

}  // namespace segfuse

#include "segfuse/segnet.hpp"

#include "segfuse/metrics.hpp"
#include "segfuse/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace segfuse {

void SegNetConfig::validate() const {
    if (base_channels < 1) throw ConfigError("base_channels must be positive");
    if (depth < 1 || depth > 6) throw ConfigError("depth must lie in [1,6]");
    if (input_size < (1 << depth))
        throw ConfigError("input_size " + std::to_string(input_size) + " too small for depth " +
                          std::to_string(depth));
    if (input_size % (1 << depth) != 0)
        throw ConfigError("input_size " + std::to_string(input_size) +
                          " not divisible by 2^depth = " + std::to_string(1 << depth));
}

namespace {

Tensor he_conv(Rng& rng, int cout, int cin, int kh, int kw) {
    const double std = std::sqrt(2.0 / (cin * kh * kw));
    Tensor t({cout, cin, kh, kw}, 0.0, true);
    for (auto& v : t.data()) v = rng.normal() * std;
    return t;
}

int level_channels(const SegNetConfig& cfg, int level) {
    return cfg.base_channels << std::min(level, 3);
}

}  // namespace

std::vector<Tensor> SegModel::params() const {
    std::vector<Tensor> out;
    for (auto& t : enc_w) out.push_back(t);
    for (auto& t : enc_b) out.push_back(t);
    for (auto& t : dec_w) out.push_back(t);
    for (auto& t : dec_b) out.push_back(t);
    out.push_back(head_w);
    out.push_back(head_b);
    return out;
}

std::vector<NamedTensor> SegModel::named_params() const {
    std::vector<NamedTensor> out;
    for (size_t i = 0; i < enc_w.size(); ++i) {
        out.push_back({"enc" + std::to_string(i) + ".w", enc_w[i]});
        out.push_back({"enc" + std::to_string(i) + ".b", enc_b[i]});
    }
    for (size_t i = 0; i < dec_w.size(); ++i) {
        out.push_back({"dec" + std::to_string(i) + ".w", dec_w[i]});
        out.push_back({"dec" + std::to_string(i) + ".b", dec_b[i]});
    }
    out.push_back({"head.w", head_w});
    out.push_back({"head.b", head_b});
    return out;
}

SegModel build_segnet(const SegNetConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed ^ 0x5e97e7ULL);
    SegModel m;
    m.cfg = config;
    int cin = 3;
    for (int level = 0; level < config.depth; ++level) {
        const int cout = level_channels(config, level);
        m.enc_w.push_back(he_conv(rng, cout, cin, 3, 3));
        m.enc_b.push_back(Tensor({cout, 1, 1}, 0.0, true));
        cin = cout;
    }
    // Decoder mirrors the encoder; level i consumes the upsampled deeper
    // feature, optionally concatenated with the encoder feature of the same
    // resolution.
    for (int level = config.depth - 1; level >= 0; --level) {
        const int target = level == 0 ? config.base_channels : level_channels(config, level - 1);
        int dec_in = cin;
        if (config.skip_connections && level > 0) dec_in += level_channels(config, level - 1);
        m.dec_w.push_back(he_conv(rng, target, dec_in, 3, 3));
        m.dec_b.push_back(Tensor({target, 1, 1}, 0.0, true));
        cin = target;
    }
    m.head_w = he_conv(rng, 1, cin, 1, 1);
    m.head_b = Tensor({1, 1, 1}, 0.0, true);
    return m;
}

Tensor forward_segment(const SegModel& model, const Tensor& frame) {
    const int s = model.cfg.input_size;
    if (frame.ndim() != 3 || frame.shape()[0] != 3 || frame.shape()[1] != s ||
        frame.shape()[2] != s)
        throw ShapeError("forward_segment expects [3," + std::to_string(s) + "," +
                         std::to_string(s) + "], got " + shape_str(frame.shape()));
    const SegModel& m = model;
    std::vector<Tensor> skips;
    Tensor x = frame;
    for (int level = 0; level < m.cfg.depth; ++level) {
        x = relu(add(conv2d(x, m.enc_w[level], 2, 1), m.enc_b[level]));
        skips.push_back(x);
    }
    for (int i = 0; i < m.cfg.depth; ++i) {
        const int level = m.cfg.depth - 1 - i;
        x = upsample2x_nearest(x);
        if (m.cfg.skip_connections && level > 0) x = concat({x, skips[level - 1]}, 0);
        x = relu(add(conv2d(x, m.dec_w[i], 1, 1), m.dec_b[i]));
    }
    Tensor logits = add(conv2d(x, m.head_w, 1, 0), m.head_b);
    return reshape(logits, {s, s});
}

SoftMask predict_soft(const SegModel& model, const Image& frame) {
    const Tensor logits = forward_segment(model, image_to_tensor(frame));
    return soft_mask_from_tensor(sigmoid(logits));
}

BinaryMask predict_mask(const SegModel& model, const Image& frame, double threshold) {
    return threshold_mask(predict_soft(model, frame), threshold);
}

namespace {

std::vector<std::vector<double>> snapshot(std::vector<Tensor>& params) {
    std::vector<std::vector<double>> out;
    for (auto& p : params) out.push_back(p.data());
    return out;
}

void restore(std::vector<Tensor>& params, const std::vector<std::vector<double>>& snap) {
    for (size_t i = 0; i < params.size(); ++i) params[i].data() = snap[i];
}

}  // namespace

SegTrainingHistory train_segnet(SegModel& model, const std::vector<LabelledImage>& train,
                                const std::vector<LabelledImage>& val, int epochs,
                                int batch_size, double lr, std::uint64_t seed) {
    if (train.empty()) throw ConfigError("train_segnet: empty training set");
    if (batch_size < 1) throw ConfigError("train_segnet: batch_size must be positive");
    SegTrainingHistory history;
    if (epochs == 0) return history;

    auto params = model.params();
    Optimizer opt(Optimizer::Kind::Adam, lr);
    Rng rng(seed ^ 0x7a1137ULL);

    std::vector<std::vector<double>> best;
    double best_iou = -1.0;

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        // Fisher-Yates with the run RNG.
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.randint(i)]);

        double loss_total = 0.0;
        int n_batches = 0;
        for (size_t start = 0; start < order.size(); start += batch_size) {
            const size_t end = std::min(order.size(), start + batch_size);
            Tensor batch_loss;
            for (size_t i = start; i < end; ++i) {
                const auto& sample = train[order[i]];
                Tensor logits = forward_segment(model, image_to_tensor(sample.frame));
                Tensor loss = bce_with_logits(logits, mask_to_tensor(sample.mask));
                batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
            }
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
            backward(batch_loss);
            opt.step(params);
            loss_total += batch_loss.value();
            ++n_batches;
        }

        double val_iou = 0.0;
        if (!val.empty()) {
            for (const auto& sample : val)
                val_iou += iou(predict_mask(model, sample.frame), sample.mask);
            val_iou /= static_cast<double>(val.size());
        }
        history.epochs.push_back({epoch, loss_total / n_batches, val_iou});
        if (val.empty() || val_iou > best_iou) {
            best_iou = val_iou;
            best = snapshot(params);
            history.best_epoch = epoch;
        }
    }
    if (!best.empty()) restore(params, best);
    return history;
}

void save_segnet(const std::string& path, const SegModel& model, std::uint64_t seed) {
    nlohmann::json topo;
    topo["kind"] = "segnet";
    topo["base_channels"] = model.cfg.base_channels;
    topo["depth"] = model.cfg.depth;
    topo["skip_connections"] = model.cfg.skip_connections;
    topo["input_size"] = model.cfg.input_size;
    save_checkpoint(path, topo, model.named_params(), seed);
}

SegModel load_segnet(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.topology.value("kind", "") != "segnet")
        throw IoError("not a segnet checkpoint: " + path);
    SegNetConfig cfg;
    cfg.base_channels = ck.topology.at("base_channels");
    cfg.depth = ck.topology.at("depth");
    cfg.skip_connections = ck.topology.at("skip_connections");
    cfg.input_size = ck.topology.at("input_size");
    SegModel m = build_segnet(cfg, ck.seed);
    for (auto& np : m.named_params()) {
        auto it = ck.params.find(np.name);
        if (it == ck.params.end()) throw IoError("checkpoint missing parameter " + np.name);
        if (it->second.shape() != np.tensor.shape())
            throw IoError("checkpoint parameter shape mismatch for " + np.name);
        np.tensor.data() = it->second.data();
    }
    return m;
}

}  // namespace segfuse

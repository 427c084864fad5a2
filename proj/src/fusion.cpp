#include "segfuse/fusion.hpp"

#include "segfuse/optim.hpp"
#include "segfuse/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace segfuse {

void FusionConfig::validate() const {
    if (token_dim < 1 || n_heads < 1 || n_layers < 1 || token_grid < 1)
        throw ConfigError("fusion config fields must be positive");
    if (token_dim % n_heads != 0)
        throw ConfigError("token_dim " + std::to_string(token_dim) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    if (mask_size % token_grid != 0)
        throw ConfigError("mask_size " + std::to_string(mask_size) +
                          " not divisible by token grid " + std::to_string(token_grid));
}

namespace {

Tensor xavier(Rng& rng, Shape shape, int fan_in, int fan_out) {
    const double std = std::sqrt(2.0 / (fan_in + fan_out));
    Tensor t(std::move(shape), 0.0, true);
    for (auto& v : t.data()) v = rng.normal() * std;
    return t;
}

Tensor mask_tensor(const SoftMask& m) {
    return Tensor::from_data({m.height, m.width}, m.values);
}

}  // namespace

std::vector<Tensor> FusionModel::params() const {
    std::vector<Tensor> out{proj_static, proj_temporal, emb_static, emb_temporal};
    for (const auto& b : blocks) {
        out.insert(out.end(), {b.wq, b.wk, b.wv, b.wo, b.ln1_g, b.ln1_b, b.ln2_g, b.ln2_b,
                               b.ff1_w, b.ff1_b, b.ff2_w, b.ff2_b});
    }
    out.push_back(head_w);
    out.push_back(head_b);
    return out;
}

std::vector<NamedTensor> FusionModel::named_params() const {
    std::vector<NamedTensor> out{{"proj_static", proj_static},
                                 {"proj_temporal", proj_temporal},
                                 {"emb_static", emb_static},
                                 {"emb_temporal", emb_temporal}};
    for (size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const std::string p = "block" + std::to_string(i) + ".";
        out.push_back({p + "wq", b.wq});
        out.push_back({p + "wk", b.wk});
        out.push_back({p + "wv", b.wv});
        out.push_back({p + "wo", b.wo});
        out.push_back({p + "ln1_g", b.ln1_g});
        out.push_back({p + "ln1_b", b.ln1_b});
        out.push_back({p + "ln2_g", b.ln2_g});
        out.push_back({p + "ln2_b", b.ln2_b});
        out.push_back({p + "ff1_w", b.ff1_w});
        out.push_back({p + "ff1_b", b.ff1_b});
        out.push_back({p + "ff2_w", b.ff2_w});
        out.push_back({p + "ff2_b", b.ff2_b});
    }
    out.push_back({"head_w", head_w});
    out.push_back({"head_b", head_b});
    return out;
}

FusionModel build_fusion_model(const FusionConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed ^ 0xf051071ULL);
    FusionModel m;
    m.cfg = config;
    const int d = config.token_dim;
    const int pp = config.patch_px() * config.patch_px();
    m.proj_static = xavier(rng, {d, pp, 1}, pp, d);
    m.proj_temporal = xavier(rng, {d, pp, 1}, pp, d);
    m.emb_static = xavier(rng, {d}, d, d);
    m.emb_temporal = xavier(rng, {d}, d, d);
    for (int layer = 0; layer < config.n_layers; ++layer) {
        AttentionBlock b;
        b.wq = xavier(rng, {d, d}, d, d);
        b.wk = xavier(rng, {d, d}, d, d);
        b.wv = xavier(rng, {d, d}, d, d);
        b.wo = xavier(rng, {d, d}, d, d);
        b.ln1_g = Tensor({d}, 1.0, true);
        b.ln1_b = Tensor({d}, 0.0, true);
        b.ln2_g = Tensor({d}, 1.0, true);
        b.ln2_b = Tensor({d}, 0.0, true);
        b.ff1_w = xavier(rng, {d, 4 * d}, d, 4 * d);
        b.ff1_b = Tensor({4 * d}, 0.0, true);
        b.ff2_w = xavier(rng, {4 * d, d}, 4 * d, d);
        b.ff2_b = Tensor({d}, 0.0, true);
        m.blocks.push_back(std::move(b));
    }
    m.head_w = xavier(rng, {d, pp}, d, pp);
    m.head_b = Tensor({pp}, 0.0, true);
    return m;
}

namespace {

void check_pair(const FusionConfig& cfg, const PredictionPair& pair) {
    const int s = cfg.mask_size;
    auto check = [&](const SoftMask& m, const char* which) {
        if (m.width != s || m.height != s)
            throw ShapeError(std::string("fusion ") + which + " prediction is " +
                             std::to_string(m.width) + "x" + std::to_string(m.height) +
                             ", expected " + std::to_string(s) + "x" + std::to_string(s));
    };
    check(pair.static_pred, "static");
    check(pair.temporal_pred, "temporal");
    if (pair.gt && (pair.gt->width != s || pair.gt->height != s))
        throw ShapeError("fusion gt mask size mismatch");
}

}  // namespace

Tensor tokenize(const FusionModel& model, const PredictionPair& pair) {
    check_pair(model.cfg, pair);
    const int patch = model.cfg.patch_px();
    auto modality_tokens = [&](const SoftMask& m, const Tensor& proj, const Tensor& emb) {
        Tensor patches = grid_to_patches(mask_tensor(m), patch);     // [N, P^2]
        Tensor projected = conv1d(transpose(patches), proj, 1, 0);   // [D, N]
        return add(transpose(projected), emb);                       // [N, D] + [D]
    };
    Tensor st = modality_tokens(pair.static_pred, model.proj_static, model.emb_static);
    Tensor tp = modality_tokens(pair.temporal_pred, model.proj_temporal, model.emb_temporal);
    return concat({st, tp}, 0);  // [2N, D]
}

Tensor positional_encode(const FusionConfig& cfg, const Tensor& tokens) {
    const int n = cfg.tokens_per_modality();
    const int d = cfg.token_dim;
    if (tokens.ndim() != 2 || tokens.shape()[0] != 2 * n || tokens.shape()[1] != d)
        throw ShapeError("positional_encode expects [" + std::to_string(2 * n) + "," +
                         std::to_string(d) + "], got " + shape_str(tokens.shape()));
    Tensor pe({2 * n, d}, 0.0);
    auto& data = pe.data();
    for (int i = 0; i < 2 * n; ++i) {
        const int modality = i < n ? 0 : 1;
        const int row = (i % n) / cfg.token_grid;
        const int col = (i % n) % cfg.token_grid;
        const double phase = modality * M_PI / 2.0;
        for (int j = 0; j < d; ++j) {
            const double freq = std::pow(10000.0, -4.0 * (j / 4) / d);
            double v;
            switch (j % 4) {
                case 0: v = std::sin(row * freq + phase); break;
                case 1: v = std::cos(row * freq + phase); break;
                case 2: v = std::sin(col * freq + phase); break;
                default: v = std::cos(col * freq + phase); break;
            }
            data[static_cast<size_t>(i) * d + j] = v;
        }
    }
    return add(tokens, pe);
}

Tensor self_attention_block(const AttentionBlock& block, int n_heads, const Tensor& tokens) {
    const int d = tokens.shape()[1];
    if (d % n_heads != 0)
        throw ShapeError("token dim " + std::to_string(d) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
    const int dh = d / n_heads;
    Tensor q = matmul(tokens, block.wq);
    Tensor k = matmul(tokens, block.wk);
    Tensor v = matmul(tokens, block.wv);
    std::vector<Tensor> heads;
    for (int hh = 0; hh < n_heads; ++hh) {
        Tensor qh = slice(q, 1, hh * dh, dh);
        Tensor kh = slice(k, 1, hh * dh, dh);
        Tensor vh = slice(v, 1, hh * dh, dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(dh));
        Tensor att = softmax(scores, 1);
        heads.push_back(matmul(att, vh));
    }
    Tensor attended = matmul(concat(heads, 1), block.wo);
    Tensor x = layer_norm_rows(add(tokens, attended), block.ln1_g, block.ln1_b);
    Tensor f = matmul(relu(add(matmul(x, block.ff1_w), block.ff1_b)), block.ff2_w);
    f = add(f, block.ff2_b);
    return layer_norm_rows(add(x, f), block.ln2_g, block.ln2_b);
}

Tensor fuse(const FusionModel& model, const PredictionPair& pair) {
    const FusionConfig& cfg = model.cfg;
    Tensor x = positional_encode(cfg, tokenize(model, pair));
    for (const auto& block : model.blocks) x = self_attention_block(block, cfg.n_heads, x);
    Tensor patch_logits = add(matmul(x, model.head_w), model.head_b);  // [2N, P^2]
    const int n = cfg.tokens_per_modality();
    // Each grid position is predicted by its static and its temporal token.
    Tensor merged = scale(add(slice(patch_logits, 0, 0, n), slice(patch_logits, 0, n, n)), 0.5);
    return patches_to_grid(merged, cfg.token_grid, cfg.token_grid, cfg.patch_px());
}

SoftMask fuse_soft(const FusionModel& model, const PredictionPair& pair) {
    return soft_mask_from_tensor(sigmoid(fuse(model, pair)));
}

FusionTrainingHistory train_fusion(FusionModel& model, const std::vector<PredictionPair>& pairs,
                                   int epochs, int batch_size, double lr, std::uint64_t seed) {
    if (pairs.empty()) throw ConfigError("train_fusion: empty pair set");
    for (const auto& p : pairs)
        if (!p.gt) throw ConfigError("train_fusion: pair without ground truth");
    if (batch_size < 1) throw ConfigError("train_fusion: batch_size must be positive");
    FusionTrainingHistory history;
    if (epochs == 0) return history;

    auto params = model.params();
    Optimizer opt(Optimizer::Kind::Adam, lr);
    Rng rng(seed ^ 0xf0510ULL);

    std::vector<size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.randint(i)]);
        double loss_total = 0.0;
        int n_batches = 0;
        for (size_t start = 0; start < order.size(); start += batch_size) {
            const size_t end = std::min(order.size(), start + batch_size);
            Tensor batch_loss;
            for (size_t i = start; i < end; ++i) {
                const auto& pair = pairs[order[i]];
                Tensor loss = bce_with_logits(fuse(model, pair), mask_to_tensor(*pair.gt));
                batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
            }
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
            backward(batch_loss);
            opt.step(params);
            loss_total += batch_loss.value();
            ++n_batches;
        }
        history.epochs.push_back({epoch, loss_total / n_batches});
    }
    return history;
}

BinaryMask weighted_mean_baseline(const PredictionPair& pair, double alpha) {
    if (alpha < 0.0 || alpha > 1.0)
        throw DomainError("weighted_mean_baseline alpha " + std::to_string(alpha) +
                          " outside [0,1]");
    if (pair.static_pred.width != pair.temporal_pred.width ||
        pair.static_pred.height != pair.temporal_pred.height)
        throw ShapeError("weighted_mean_baseline: prediction sizes differ");
    SoftMask mixed{pair.static_pred.width, pair.static_pred.height,
                   std::vector<double>(pair.static_pred.values.size())};
    for (size_t i = 0; i < mixed.values.size(); ++i)
        mixed.values[i] =
            alpha * pair.static_pred.values[i] + (1.0 - alpha) * pair.temporal_pred.values[i];
    return threshold_mask(mixed, 0.5);
}

void save_fusion_model(const std::string& path, const FusionModel& model, std::uint64_t seed) {
    nlohmann::json topo;
    topo["kind"] = "fusion";
    topo["token_dim"] = model.cfg.token_dim;
    topo["n_heads"] = model.cfg.n_heads;
    topo["n_layers"] = model.cfg.n_layers;
    topo["token_grid"] = model.cfg.token_grid;
    topo["mask_size"] = model.cfg.mask_size;
    save_checkpoint(path, topo, model.named_params(), seed);
}

FusionModel load_fusion_model(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.topology.value("kind", "") != "fusion")
        throw IoError("not a fusion checkpoint: " + path);
    FusionConfig cfg;
    cfg.token_dim = ck.topology.at("token_dim");
    cfg.n_heads = ck.topology.at("n_heads");
    cfg.n_layers = ck.topology.at("n_layers");
    cfg.token_grid = ck.topology.at("token_grid");
    cfg.mask_size = ck.topology.at("mask_size");
    FusionModel m = build_fusion_model(cfg, ck.seed);
    for (auto& np : m.named_params()) {
        auto it = ck.params.find(np.name);
        if (it == ck.params.end()) throw IoError("checkpoint missing parameter " + np.name);
        np.tensor.data() = it->second.data();
    }
    return m;
}

}  // namespace segfuse

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "segfuse/fusion.hpp"
#include "segfuse/gradcheck.hpp"
#include "segfuse/rng.hpp"

using namespace segfuse;

namespace {

FusionConfig tiny_config() {
    FusionConfig cfg;
    cfg.token_dim = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.token_grid = 4;
    cfg.mask_size = 32;
    return cfg;
}

SoftMask random_soft(int size, Rng& rng) {
    SoftMask m{size, size, std::vector<double>(static_cast<size_t>(size) * size)};
    for (auto& v : m.values) v = rng.uniform();
    return m;
}

SoftMask constant_soft(int size, double v) {
    return SoftMask{size, size, std::vector<double>(static_cast<size_t>(size) * size, v)};
}

}  // namespace

TEST_CASE("config validation: head divisibility and grid divisibility") {
    FusionConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.token_dim = 9;  // not divisible by 2 heads
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.token_grid = 5;  // 32 not divisible by 5
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("256x256 masks with a 16x16 token grid give 256+256 tokens") {
    FusionConfig cfg;  // defaults: grid 16, mask 256, dim 32
    CHECK(cfg.tokens_per_modality() == 256);
    CHECK(cfg.patch_px() == 16);
    FusionModel model = build_fusion_model(cfg, 1);
    Rng rng(1);
    PredictionPair pair{random_soft(256, rng), random_soft(256, rng), std::nullopt};
    Tensor tokens = tokenize(model, pair);
    CHECK(tokens.shape() == Shape{512, 32});
}

TEST_CASE("zero-input masks tokenize to the modality embeddings alone") {
    FusionConfig cfg = tiny_config();
    FusionModel model = build_fusion_model(cfg, 2);
    PredictionPair pair{constant_soft(32, 0.0), constant_soft(32, 0.0), std::nullopt};
    Tensor tokens = tokenize(model, pair);
    const int n = cfg.tokens_per_modality();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cfg.token_dim; ++j) {
            CHECK(tokens.data()[i * cfg.token_dim + j] ==
                  doctest::Approx(model.emb_static.data()[j]).epsilon(1e-12));
            CHECK(tokens.data()[(n + i) * cfg.token_dim + j] ==
                  doctest::Approx(model.emb_temporal.data()[j]).epsilon(1e-12));
        }
}

TEST_CASE("positional encodings are pairwise distinct across all positions") {
    FusionConfig cfg = tiny_config();
    const int n2 = 2 * cfg.tokens_per_modality();
    Tensor pe = positional_encode(cfg, Tensor({n2, cfg.token_dim}, 0.0));
    for (int i = 0; i < n2; ++i)
        for (int j = i + 1; j < n2; ++j) {
            double diff = 0.0;
            for (int c = 0; c < cfg.token_dim; ++c) {
                const double d = pe.data()[i * cfg.token_dim + c] -
                                 pe.data()[j * cfg.token_dim + c];
                diff += d * d;
            }
            CHECK(diff > 1e-12);
        }

    // Position 0 of the static modality carries the sin(0)/cos(0) pattern.
    CHECK(pe.data()[0] == doctest::Approx(0.0));  // sin(0)
    CHECK(pe.data()[1] == doctest::Approx(1.0));  // cos(0)

    // Applying the encoding twice shifts the values again (not idempotent).
    Tensor twice = positional_encode(cfg, pe);
    CHECK(twice.data() != pe.data());
}

TEST_CASE("single-token attention puts weight one on itself") {
    // With one token the attention weight is softmax of a single score, i.e.
    // exactly 1 regardless of the score - so zeroing wq/wk cannot change the
    // block output.
    FusionConfig cfg = tiny_config();
    FusionModel model = build_fusion_model(cfg, 3);
    AttentionBlock block = model.blocks[0];
    Rng rng(3);
    Tensor token({1, cfg.token_dim}, 0.0);
    for (auto& v : token.data()) v = rng.normal();

    Tensor out1 = self_attention_block(block, cfg.n_heads, token);
    std::fill(block.wq.data().begin(), block.wq.data().end(), 0.0);
    std::fill(block.wk.data().begin(), block.wk.data().end(), 0.0);
    Tensor out2 = self_attention_block(block, cfg.n_heads, token);
    REQUIRE(out1.size() == out2.size());
    for (std::int64_t i = 0; i < out1.size(); ++i)
        CHECK(out1.data()[i] == doctest::Approx(out2.data()[i]).epsilon(1e-12));
}

TEST_CASE("attention block is permutation-equivariant without positions") {
    FusionConfig cfg = tiny_config();
    FusionModel model = build_fusion_model(cfg, 4);
    Rng rng(4);
    const int n = 6, d = cfg.token_dim;
    Tensor tokens({n, d}, 0.0);
    for (auto& v : tokens.data()) v = rng.normal();

    std::vector<int> perm{3, 0, 5, 1, 4, 2};
    Tensor permuted({n, d}, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            permuted.data()[i * d + j] = tokens.data()[perm[i] * d + j];

    Tensor out = self_attention_block(model.blocks[0], cfg.n_heads, tokens);
    Tensor out_p = self_attention_block(model.blocks[0], cfg.n_heads, permuted);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            CHECK(out_p.data()[i * d + j] ==
                  doctest::Approx(out.data()[perm[i] * d + j]).epsilon(1e-9));
}

TEST_CASE("attention rows sum to one inside the block") {
    // Verified indirectly: with wv set so v = tokens and wo = identity, the
    // attended output of a 1-head block before residual is a convex
    // combination of rows; feeding constant rows must return the same
    // constant, which only holds if each attention row sums to 1.
    FusionConfig cfg = tiny_config();
    cfg.n_heads = 1;
    FusionModel model = build_fusion_model(cfg, 5);
    AttentionBlock& b = model.blocks[0];
    const int d = cfg.token_dim;
    // v-projection = identity, wo = identity, so attended = att * tokens.
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            b.wv.data()[i * d + j] = i == j ? 1.0 : 0.0;
            b.wo.data()[i * d + j] = i == j ? 1.0 : 0.0;
        }
    // Uniform token rows: every convex combination reproduces the row.
    Tensor tokens({5, d}, 0.0);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < d; ++j) tokens.data()[i * d + j] = j * 0.3 - 1.0;
    // residual+LN of (tokens + att*tokens) == residual+LN of 2*tokens iff
    // att rows sum to one.
    Tensor out = self_attention_block(b, 1, tokens);
    for (int i = 1; i < 5; ++i)
        for (int j = 0; j < d; ++j)
            CHECK(out.data()[i * d + j] == doctest::Approx(out.data()[j]).epsilon(1e-9));
}

TEST_CASE("fuse: output shape, zero-parameter constancy, modality sensitivity") {
    FusionConfig cfg = tiny_config();
    FusionModel model = build_fusion_model(cfg, 6);
    Rng rng(6);
    PredictionPair pair{random_soft(32, rng), random_soft(32, rng), std::nullopt};

    Tensor logits = fuse(model, pair);
    CHECK(logits.shape() == Shape{32, 32});

    // All-zero parameters collapse to a constant logit map.
    FusionModel zero = build_fusion_model(cfg, 6);
    for (auto& p : zero.params()) std::fill(p.data().begin(), p.data().end(), 0.0);
    Tensor flat = fuse(zero, pair);
    for (double v : flat.data()) CHECK(v == doctest::Approx(flat.data()[0]).epsilon(1e-12));

    // Permuting the temporal input while the static input stays fixed must
    // change the fused output: the model reads both modalities.
    PredictionPair shuffled = pair;
    std::reverse(shuffled.temporal_pred.values.begin(), shuffled.temporal_pred.values.end());
    Tensor logits2 = fuse(model, shuffled);
    bool differs = false;
    for (std::int64_t i = 0; i < logits.size(); ++i)
        if (std::abs(logits.data()[i] - logits2.data()[i]) > 1e-9) differs = true;
    CHECK(differs);

    // And the static modality is read too.
    PredictionPair shuffled_s = pair;
    std::reverse(shuffled_s.static_pred.values.begin(), shuffled_s.static_pred.values.end());
    Tensor logits3 = fuse(model, shuffled_s);
    differs = false;
    for (std::int64_t i = 0; i < logits.size(); ++i)
        if (std::abs(logits.data()[i] - logits3.data()[i]) > 1e-9) differs = true;
    CHECK(differs);
}

TEST_CASE("end-to-end fusion gradients match finite differences on 32x32 masks") {
    FusionConfig cfg = tiny_config();
    FusionModel model = build_fusion_model(cfg, 7);
    Rng rng(7);
    PredictionPair pair{random_soft(32, rng), random_soft(32, rng), std::nullopt};
    std::vector<double> tgt(32 * 32);
    for (auto& v : tgt) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor target = Tensor::from_data({32, 32}, std::move(tgt));

    double err = gradient_check(model.params(), [&] {
        return bce_with_logits(fuse(model, pair), target);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("train_fusion: learning signal, no-op epochs, gt requirement") {
    FusionConfig cfg = tiny_config();
    Rng rng(8);
    // Pairs where gt equals the thresholded static prediction: learnable.
    std::vector<PredictionPair> pairs;
    for (int i = 0; i < 6; ++i) {
        PredictionPair p{random_soft(32, rng), random_soft(32, rng), std::nullopt};
        p.gt = threshold_mask(p.static_pred, 0.5);
        pairs.push_back(std::move(p));
    }

    double start_sum = 0.0, end_sum = 0.0;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        FusionModel model = build_fusion_model(cfg, seed);
        FusionTrainingHistory h = train_fusion(model, pairs, 6, 4, 3e-3, seed);
        REQUIRE(h.epochs.size() == 6);
        start_sum += h.epochs.front().train_loss;
        end_sum += h.epochs.back().train_loss;
    }
    CHECK(end_sum <= start_sum);  // 3-seed average decreases

    FusionModel model = build_fusion_model(cfg, 9);
    std::vector<double> before = model.params()[0].data();
    FusionTrainingHistory h0 = train_fusion(model, pairs, 0, 4, 3e-3, 9);
    CHECK(h0.epochs.empty());
    CHECK(model.params()[0].data() == before);

    std::vector<PredictionPair> no_gt{{constant_soft(32, 0.5), constant_soft(32, 0.5),
                                       std::nullopt}};
    CHECK_THROWS_AS(train_fusion(model, no_gt, 1, 4, 3e-3, 9), ConfigError);
}

TEST_CASE("train_fusion is deterministic under a fixed seed") {
    FusionConfig cfg = tiny_config();
    Rng rng(10);
    std::vector<PredictionPair> pairs;
    for (int i = 0; i < 4; ++i) {
        PredictionPair p{random_soft(32, rng), random_soft(32, rng), std::nullopt};
        p.gt = threshold_mask(p.temporal_pred, 0.5);
        pairs.push_back(std::move(p));
    }
    FusionModel m1 = build_fusion_model(cfg, 11);
    FusionModel m2 = build_fusion_model(cfg, 11);
    auto h1 = train_fusion(m1, pairs, 3, 2, 3e-3, 11);
    auto h2 = train_fusion(m2, pairs, 3, 2, 3e-3, 11);
    REQUIRE(h1.epochs.size() == h2.epochs.size());
    for (size_t i = 0; i < h1.epochs.size(); ++i)
        CHECK(h1.epochs[i].train_loss == h2.epochs[i].train_loss);
    CHECK(m1.params()[0].data() == m2.params()[0].data());
}

TEST_CASE("weighted mean baseline: endpoints, fixed point, monotonicity, domain") {
    Rng rng(12);
    SoftMask s = random_soft(16, rng);
    SoftMask t = random_soft(16, rng);
    PredictionPair pair{s, t, std::nullopt};

    CHECK(weighted_mean_baseline(pair, 1.0).pixels == threshold_mask(s, 0.5).pixels);
    CHECK(weighted_mean_baseline(pair, 0.0).pixels == threshold_mask(t, 0.5).pixels);

    PredictionPair same{s, s, std::nullopt};
    BinaryMask ref = weighted_mean_baseline(same, 0.5);
    for (double a : {0.0, 0.25, 0.7, 1.0})
        CHECK(weighted_mean_baseline(same, a).pixels == ref.pixels);

    CHECK_THROWS_AS(weighted_mean_baseline(pair, -0.1), DomainError);
    CHECK_THROWS_AS(weighted_mean_baseline(pair, 1.1), DomainError);

    // Raising a pixel's soft value never flips it foreground -> background.
    BinaryMask before = weighted_mean_baseline(pair, 0.5);
    PredictionPair bumped = pair;
    for (auto& v : bumped.static_pred.values) v = std::min(1.0, v + 0.2);
    BinaryMask after = weighted_mean_baseline(bumped, 0.5);
    for (size_t i = 0; i < before.pixels.size(); ++i)
        if (before.pixels[i]) CHECK(after.pixels[i]);
}

TEST_CASE("fusion checkpoints round-trip config and parameters") {
    FusionModel m = build_fusion_model(tiny_config(), 13);
    const std::string path =
        (std::filesystem::temp_directory_path() / "segfuse_test_fusion.ckpt").string();
    save_fusion_model(path, m, 13);
    FusionModel back = load_fusion_model(path);
    CHECK(back.cfg.token_dim == m.cfg.token_dim);
    CHECK(back.cfg.token_grid == m.cfg.token_grid);
    CHECK(back.cfg.mask_size == m.cfg.mask_size);
    auto p1 = m.params(), p2 = back.params();
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].data() == p2[i].data());
    std::filesystem::remove(path);
}

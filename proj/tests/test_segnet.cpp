#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "segfuse/gradcheck.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/rng.hpp"
#include "segfuse/segnet.hpp"

using namespace segfuse;

namespace {

SegNetConfig tiny_config(int input_size = 16) {
    SegNetConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 2;
    cfg.input_size = input_size;
    return cfg;
}

Image uniform_image(int size, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    Image img{size, size, std::vector<std::uint8_t>(static_cast<size_t>(size) * size * 3)};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            img.at(x, y, 0) = r;
            img.at(x, y, 1) = g;
            img.at(x, y, 2) = b;
        }
    return img;
}

BinaryMask full_mask(int size, std::uint8_t v) {
    return BinaryMask{size, size, std::vector<std::uint8_t>(static_cast<size_t>(size) * size, v)};
}

}  // namespace

TEST_CASE("config validation requires divisibility by 2^depth") {
    SegNetConfig cfg = tiny_config(16);
    CHECK_NOTHROW(cfg.validate());
    cfg.input_size = 18;  // not divisible by 4
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.depth = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.base_channels = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("same seed builds identical parameters, different seed differs") {
    SegModel a = build_segnet(tiny_config(), 3);
    SegModel b = build_segnet(tiny_config(), 3);
    SegModel c = build_segnet(tiny_config(), 4);
    auto pa = a.params(), pb = b.params(), pc = c.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].data() == pb[i].data());
    bool differ = false;
    for (size_t i = 0; i < pa.size(); ++i)
        if (pa[i].data() != pc[i].data()) differ = true;
    CHECK(differ);
}

TEST_CASE("disabling skip connections narrows the decoder input") {
    SegNetConfig with = tiny_config();
    SegNetConfig without = tiny_config();
    without.skip_connections = false;
    SegModel m_with = build_segnet(with, 1);
    SegModel m_without = build_segnet(without, 1);
    REQUIRE(m_with.dec_w.size() == m_without.dec_w.size());
    // Every decoder level except the outermost consumes an extra skip tensor.
    bool any_wider = false;
    for (size_t i = 0; i < m_with.dec_w.size(); ++i) {
        CHECK(m_with.dec_w[i].shape()[1] >= m_without.dec_w[i].shape()[1]);
        if (m_with.dec_w[i].shape()[1] > m_without.dec_w[i].shape()[1]) any_wider = true;
    }
    CHECK(any_wider);
}

TEST_CASE("forward output shape equals input spatial shape across configs") {
    for (int depth : {1, 2, 3}) {
        SegNetConfig cfg = tiny_config(16);
        cfg.depth = depth;
        for (bool skip : {true, false}) {
            cfg.skip_connections = skip;
            SegModel model = build_segnet(cfg, 9);
            Tensor logits = forward_segment(model, Tensor({3, 16, 16}, 0.3));
            CHECK(logits.shape() == Shape{16, 16});
        }
    }
    SegModel model = build_segnet(tiny_config(16), 9);
    CHECK_THROWS_AS(forward_segment(model, Tensor({3, 8, 8}, 0.0)), ShapeError);
}

TEST_CASE("all-zero parameters give zero logits, hence 0.5 probabilities") {
    SegModel model = build_segnet(tiny_config(), 5);
    for (auto& p : model.params())
        std::fill(p.data().begin(), p.data().end(), 0.0);
    SoftMask soft = predict_soft(model, uniform_image(16, 120, 80, 40));
    for (double v : soft.values) CHECK(v == doctest::Approx(0.5));
    // Ties at exactly 0.5 count as foreground.
    BinaryMask m = predict_mask(model, uniform_image(16, 120, 80, 40), 0.5);
    for (auto px : m.pixels) CHECK(px == 1);
}

TEST_CASE("predict_mask is monotone in the threshold and guards its domain") {
    SegModel model = build_segnet(tiny_config(), 6);
    Image frame = uniform_image(16, 200, 90, 30);
    BinaryMask lo = predict_mask(model, frame, 0.3);
    BinaryMask hi = predict_mask(model, frame, 0.7);
    for (size_t i = 0; i < lo.pixels.size(); ++i)
        if (hi.pixels[i]) CHECK(lo.pixels[i]);  // raising threshold never adds pixels

    CHECK_THROWS_AS(predict_mask(model, frame, 0.0), DomainError);
    CHECK_THROWS_AS(predict_mask(model, frame, 1.5), DomainError);

    // Mask pixel count matches an independent scan of the soft mask.
    SoftMask soft = predict_soft(model, frame);
    BinaryMask m = predict_mask(model, frame, 0.5);
    std::int64_t expect = 0;
    for (double v : soft.values)
        if (v >= 0.5) ++expect;
    CHECK(m.foreground_count() == expect);
}

TEST_CASE("16x16 segnet gradients match finite differences") {
    SegNetConfig cfg;
    cfg.base_channels = 2;
    cfg.depth = 2;
    cfg.input_size = 16;
    SegModel model = build_segnet(cfg, 7);
    Rng rng(7);
    std::vector<double> img(3 * 16 * 16);
    for (auto& v : img) v = rng.uniform();
    Tensor frame = Tensor::from_data({3, 16, 16}, std::move(img));
    std::vector<double> tgt(16 * 16);
    for (auto& v : tgt) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor target = Tensor::from_data({16, 16}, std::move(tgt));

    double err = gradient_check(model.params(), [&] {
        return bce_with_logits(forward_segment(model, frame), target);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("training on a separable toy problem reaches val IoU > 0.99") {
    // Uniform orange frames are all-foreground; uniform green all-background.
    std::vector<LabelledImage> train, val;
    for (int i = 0; i < 4; ++i) {
        train.push_back({uniform_image(16, 245, 150, 40), full_mask(16, 1), "c_or", i});
        train.push_back({uniform_image(16, 40, 95, 35), full_mask(16, 0), "c_gr", i});
    }
    val.push_back({uniform_image(16, 245, 150, 40), full_mask(16, 1), "v_or", 0});
    val.push_back({uniform_image(16, 40, 95, 35), full_mask(16, 0), "v_gr", 0});

    SegModel model = build_segnet(tiny_config(), 8);
    SegTrainingHistory hist = train_segnet(model, train, val, 10, 4, 1e-2, 8);
    REQUIRE(!hist.epochs.empty());
    CHECK(hist.epochs.back().val_iou > 0.99);
    // Loss goes down from the first epoch to the last.
    CHECK(hist.epochs.back().train_loss < hist.epochs.front().train_loss);
    CHECK(hist.best_epoch >= 0);
}

TEST_CASE("zero epochs is a no-op; empty train set rejected") {
    SegModel model = build_segnet(tiny_config(), 9);
    std::vector<double> before = model.params()[0].data();
    std::vector<LabelledImage> data{
        {uniform_image(16, 200, 90, 30), full_mask(16, 1), "c", 0}};
    SegTrainingHistory hist = train_segnet(model, data, data, 0, 2, 1e-3, 9);
    CHECK(hist.epochs.empty());
    CHECK(model.params()[0].data() == before);

    CHECK_THROWS_AS(train_segnet(model, {}, data, 1, 2, 1e-3, 9), ConfigError);
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
    std::vector<LabelledImage> train{
        {uniform_image(16, 230, 120, 35), full_mask(16, 1), "a", 0},
        {uniform_image(16, 45, 100, 40), full_mask(16, 0), "b", 0}};

    SegModel m1 = build_segnet(tiny_config(), 10);
    SegModel m2 = build_segnet(tiny_config(), 10);
    auto h1 = train_segnet(m1, train, train, 3, 2, 1e-2, 10);
    auto h2 = train_segnet(m2, train, train, 3, 2, 1e-2, 10);
    REQUIRE(h1.epochs.size() == h2.epochs.size());
    for (size_t i = 0; i < h1.epochs.size(); ++i) {
        CHECK(h1.epochs[i].train_loss == h2.epochs[i].train_loss);
        CHECK(h1.epochs[i].val_iou == h2.epochs[i].val_iou);
    }
    auto p1 = m1.params(), p2 = m2.params();
    for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].data() == p2[i].data());

    const std::string path =
        (std::filesystem::temp_directory_path() / "segfuse_test_seg.ckpt").string();
    save_segnet(path, m1, 10);
    SegModel loaded = load_segnet(path);
    CHECK(loaded.cfg.depth == m1.cfg.depth);
    CHECK(loaded.cfg.base_channels == m1.cfg.base_channels);
    CHECK(loaded.cfg.input_size == m1.cfg.input_size);
    auto pl = loaded.params();
    for (size_t i = 0; i < p1.size(); ++i) CHECK(pl[i].data() == p1[i].data());
    std::filesystem::remove(path);
}

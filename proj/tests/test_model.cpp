#include <doctest.h>

#include <chrono>

#include "fd_check.hpp"
#include "sfcn/model.hpp"
#include "sfcn/ops.hpp"

using namespace sfcn;

namespace {

ModelConfig mini_config(int image = 16, int base = 4, int blocks = 1) {
    ModelConfig c;
    c.image_height = image;
    c.image_width = image;
    c.base_channels = base;
    c.blocks_per_module = blocks;
    c.num_categories = 4;
    return c;
}

Tensor random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor img({3, h, w});
    for (Eigen::Index i = 0; i < img.size(); ++i) img.value()[i] = rng.uniform(0.0, 1.0);
    return img;
}

}  // namespace

TEST_CASE("build: same seed gives parameter-identical models") {
    ModelConfig c = mini_config();
    Parameters a = build(c, 42);
    Parameters b = build(c, 42);
    REQUIRE(a.items.size() == b.items.size());
    for (const auto& [name, t] : a.items) {
        REQUIRE(b.has(name));
        CHECK((t.value() == b.at(name).value()).all());
    }
    Parameters other = build(c, 43);
    bool any_diff = false;
    for (const auto& [name, t] : other.items)
        if ((t.value() != a.at(name).value()).any()) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("build: biases zero, BN affine at identity") {
    Parameters p = build(mini_config(), 3);
    for (const auto& [name, t] : p.items) {
        if (name.ends_with(".bias") || name.ends_with(".shift") ||
            name.ends_with(".running_mean"))
            CHECK((t.value() == 0.0).all());
        if (name.ends_with(".scale") || name.ends_with(".running_var"))
            CHECK((t.value() == 1.0).all());
    }
}

TEST_CASE("build: desk preset runs a forward pass quickly") {
    ModelConfig c = ModelConfig::desk_preset();
    const auto t0 = std::chrono::steady_clock::now();
    Parameters p = build(c, 7);
    Tape tape;
    ForwardOutputs out = forward(tape, p, random_image(32, 32, 5));
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    CHECK(out.det_probs.shape() == Shape{2, 32, 32});
    CHECK(ms < 1000.0);
}

TEST_CASE("forward: output maps at full input resolution with unit pixel sums") {
    ModelConfig c = mini_config(64, 4, 1);
    Parameters p = build(c, 11);
    Tape tape;
    ForwardOutputs out = forward(tape, p, random_image(64, 64, 6));
    REQUIRE(out.det_probs.shape() == Shape{2, 64, 64});
    REQUIRE(out.cls_cond_probs.shape() == Shape{5, 64, 64});
    const Eigen::Index m = 64 * 64;
    for (Eigen::Index i = 0; i < m; ++i) {
        CHECK(std::abs(out.det_probs.value()[i] + out.det_probs.value()[m + i] - 1.0) < 1e-9);
        double s = 0.0;
        for (int k = 0; k < 5; ++k) s += out.cls_cond_probs.value()[k * m + i];
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("forward: wrong image size rejected") {
    Parameters p = build(mini_config(16), 1);
    Tape tape;
    CHECK_THROWS_AS(forward(tape, p, random_image(20, 16, 2)), std::invalid_argument);
    CHECK_THROWS_AS(forward(tape, p, Tensor::zeros({1, 16, 16})), std::invalid_argument);
}

TEST_CASE("forward: branch isolation between the sibling heads") {
    ModelConfig c = mini_config(16, 4, 1);
    Parameters p = build(c, 21);
    Tensor img = random_image(16, 16, 22);

    Tape t1;
    ForwardOutputs base = forward(t1, p, img);

    // classification-module weight only reaches the classification head
    p.at("m4.b0.conv1.weight").value()[0] += 0.25;
    Tape t2;
    ForwardOutputs bumped = forward(t2, p, img);
    CHECK((bumped.det_probs.value() == base.det_probs.value()).all());
    CHECK((bumped.cls_cond_probs.value() != base.cls_cond_probs.value()).any());
    p.at("m4.b0.conv1.weight").value()[0] -= 0.25;

    // detection-head weight only reaches the detection output
    p.at("det.head.weight").value()[0] += 0.25;
    Tape t3;
    ForwardOutputs bumped_det = forward(t3, p, img);
    CHECK((bumped_det.cls_cond_probs.value() == base.cls_cond_probs.value()).all());
    CHECK((bumped_det.det_probs.value() != base.det_probs.value()).any());
}

TEST_CASE("residual_block: zeroed residual path reduces to ReLU(input)") {
    ModelConfig c = mini_config(16, 4, 1);
    Parameters p = build(c, 31);
    p.at("m1.b0.conv1.weight").value().setZero();
    p.at("m1.b0.conv1.bias").value().setZero();
    p.at("m1.b0.conv2.weight").value().setZero();
    p.at("m1.b0.conv2.bias").value().setZero();

    Rng rng(32);
    Tensor x = fdtest::random_tensor({4, 8, 8}, rng, -1.0, 1.0);
    Tape tape;
    Tensor y = residual_block(tape, p, "m1.b0", x, false, {.train = true});
    Tensor expect = x.clone();
    expect.value() = expect.value().max(0.0);
    CHECK((y.value() - expect.value()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("residual_block: downsampling halves space and doubles channels") {
    ModelConfig c = mini_config(16, 32, 1);  // m2 block maps 32 -> 64 channels
    Parameters p = build(c, 33);
    Rng rng(34);
    Tensor x = fdtest::random_tensor({32, 8, 8}, rng);
    Tape tape;
    Tensor y = residual_block(tape, p, "m2.b0", x, true, {.train = true});
    CHECK(y.shape() == Shape{64, 4, 4});
}

TEST_CASE("residual_block: gradient through both paths matches finite differences") {
    ModelConfig c = mini_config(16, 2, 1);
    Parameters p = build(c, 35);
    Rng rng(36);
    Tensor x = fdtest::random_tensor({2, 4, 4}, rng);
    Tensor r = fdtest::random_tensor({4, 2, 2}, rng);
    std::vector<Tensor> checked = {p.at("m2.b0.conv1.weight"), p.at("m2.b0.proj.weight"),
                                   p.at("m2.b0.bn1.scale"), p.at("m2.b0.conv2.bias"), x};
    auto loss = [&](Tape& t) {
        // fresh running stats per probe so train-mode forwards are pure
        Parameters probe = p;
        probe.items["m2.b0.bn1.running_mean"] = Tensor::zeros({4});
        probe.items["m2.b0.bn1.running_var"] = Tensor::full({4}, 1.0);
        probe.items["m2.b0.bn2.running_mean"] = Tensor::zeros({4});
        probe.items["m2.b0.bn2.running_var"] = Tensor::full({4}, 1.0);
        Tensor y = residual_block(t, probe, "m2.b0", x, true, {.train = true});
        return ops::sum_all(t, ops::mul(t, y, r));
    };
    auto res = fdtest::check_gradients(checked, loss);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("fuse_detection: zero projection leaves the upsampled module-3 head") {
    ModelConfig c = mini_config(16, 4, 1);
    Parameters p = build(c, 41);
    p.at("det.fuse_proj.weight").value().setZero();
    p.at("det.fuse_proj.bias").value().setZero();

    Rng rng(42);
    Tensor m3_head = fdtest::random_tensor({2, 4, 4}, rng);
    Tensor m2_feats = fdtest::random_tensor({8, 8, 8}, rng);
    Tape tape;
    Tensor fused = fuse_detection(tape, p, m3_head, m2_feats);
    CHECK(fused.shape() == Shape{2, 8, 8});  // exactly (H/2, W/2)
    Tensor up = ops::conv2d_transpose(tape, m3_head, p.at("det.up1.weight"), 2);
    CHECK((fused.value() == up.value()).all());
}

TEST_CASE("fuse_detection: detection loss reaches module-2 and module-3 parameters") {
    ModelConfig c = mini_config(16, 4, 1);
    Parameters p = build(c, 51);
    for (auto& [name, t] : p.items)
        if (!Parameters::is_running_stat(name)) t.set_requires_grad(true);

    Tensor img = random_image(16, 16, 52);
    Tensor det_mask = Tensor::zeros({16, 16});
    det_mask.value().segment(0, 40).setConstant(1.0);

    Tape tape;
    ForwardOutputs out = forward(tape, p, img, {.train = true});
    Tensor loss = ops::detection_loss(tape, out.det_probs, det_mask, 2.0);
    tape.backward(loss);

    CHECK(p.at("m2.b0.conv1.weight").grad().abs().maxCoeff() > 0.0);
    CHECK(p.at("m3.b0.conv1.weight").grad().abs().maxCoeff() > 0.0);
    CHECK(p.at("det.fuse_proj.weight").grad().abs().maxCoeff() > 0.0);
    CHECK(p.at("det.up1.weight").grad().abs().maxCoeff() > 0.0);
    // the detection loss contributes exactly nothing to the sibling branch
    const Tensor& m4w = p.at("m4.b0.conv1.weight");
    CHECK((!m4w.has_grad() || m4w.grad().abs().maxCoeff() == 0.0));
}

TEST_CASE("forward: translation covariance on interior windows (eval mode)") {
    ModelConfig c = mini_config(96, 4, 1);
    Parameters p = build(c, 61);
    Tensor img = random_image(96, 96, 62);

    const int shift = 4;
    Tensor shifted({3, 96, 96});
    const Eigen::Index m = 96 * 96;
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < 96; ++r)
            for (int cc = 0; cc < 96; ++cc) {
                double v = 0.0;
                if (r >= shift && cc >= shift)
                    v = img.value()[ch * m + static_cast<Eigen::Index>(r - shift) * 96 +
                                    (cc - shift)];
                shifted.value()[ch * m + static_cast<Eigen::Index>(r) * 96 + cc] = v;
            }

    Tape t1, t2;
    ForwardOutputs a = forward(t1, p, img, {.train = false});
    ForwardOutputs b = forward(t2, p, shifted, {.train = false});

    double max_diff = 0.0;
    for (int r = 44; r < 52; ++r)
        for (int cc = 44; cc < 52; ++cc)
            for (int ch = 0; ch < 2; ++ch) {
                const double va =
                    a.det_probs.value()[ch * m + static_cast<Eigen::Index>(r) * 96 + cc];
                const double vb =
                    b.det_probs.value()[ch * m + static_cast<Eigen::Index>(r + shift) * 96 +
                                        (cc + shift)];
                max_diff = std::max(max_diff, std::abs(va - vb));
            }
    CHECK(max_diff < 1e-6);
}

TEST_CASE("parameter count matches the closed-form architecture table") {
    for (ModelConfig c : {ModelConfig::desk_preset(), mini_config(16, 4, 2)}) {
        Parameters p = build(c, 71);
        CHECK(p.learnable_count() == closed_form_param_count(c));
    }
    ModelConfig full = ModelConfig::full_preset();
    Parameters p = build(full, 72);
    CHECK(p.learnable_count() == closed_form_param_count(full));

    ModelConfig f5 = ModelConfig::desk_preset();
    f5.arch = Arch::fcn5cls;
    Parameters p5 = build(f5, 73);
    CHECK(p5.learnable_count() == closed_form_param_count(f5));
}

TEST_CASE("depth accounting: full preset reconstructs the ~80-layer network") {
    CHECK(conv_layer_count(ModelConfig::full_preset()) == 81);
    CHECK(conv_layer_count(ModelConfig::desk_preset()) == 25);
}

TEST_CASE("fcn5cls variant has no detection-branch parameters") {
    ModelConfig c = mini_config(16, 4, 1);
    c.arch = Arch::fcn5cls;
    Parameters p = build(c, 81);
    for (const auto& [name, t] : p.items) CHECK(name.rfind("det.", 0) != 0);

    Tape tape;
    ForwardOutputs out = forward(tape, p, random_image(16, 16, 82));
    const Eigen::Index m = 16 * 16;
    // derived detection map: channel 1 = sum of the category maps
    for (Eigen::Index i = 0; i < m; ++i) {
        double s = 0.0;
        for (int k = 1; k <= 4; ++k) s += out.cls_cond_probs.value()[k * m + i];
        CHECK(out.det_probs.value()[m + i] == doctest::Approx(s).epsilon(1e-12));
        CHECK(std::abs(out.det_probs.value()[i] + s - 1.0) < 1e-9);
    }
}

TEST_CASE("config validation rejects bad dimensions") {
    ModelConfig c = mini_config(16);
    c.image_height = 18;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = mini_config(16);
    c.num_categories = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = mini_config(16);
    c.blocks_per_module = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

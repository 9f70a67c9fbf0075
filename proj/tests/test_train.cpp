#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "sfcn/train.hpp"

using namespace sfcn;

namespace {

ModelConfig tiny_model() {
    ModelConfig c;
    c.image_height = c.image_width = 16;
    c.base_channels = 4;
    c.blocks_per_module = 1;
    c.num_categories = 4;
    return c;
}

TrainConfig tiny_train() {
    TrainConfig t;
    t.batch_size = 4;
    t.stage_epochs = {1, 1, 1};
    t.patch_size = 16;
    t.val_interval = 0;
    return t;
}

SynthConfig tiny_synth() {
    SynthConfig s;
    s.image_height = s.image_width = 16;
    s.nuclei_min = 1;
    s.nuclei_max = 2;
    s.min_separation = 5.0;
    s.distractor_min = 0;
    s.distractor_max = 0;
    return s;
}

std::map<std::string, Eigen::ArrayXd> snapshot(const Parameters& p) {
    std::map<std::string, Eigen::ArrayXd> s;
    for (const auto& [name, t] : p.items) s[name] = t.value();
    return s;
}

}  // namespace

TEST_CASE("xavier_init: closed-form bound, symmetry, zero biases") {
    CHECK(xavier_bound({3, 3}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(xavier_bound({8, 4, 3, 3}) == doctest::Approx(std::sqrt(6.0 / (12.0 * 9.0))));
    CHECK_THROWS_AS(xavier_bound({5}), std::invalid_argument);

    Rng rng(301);
    Tensor t = xavier_init({400, 250}, rng);  // 1e5 draws, bound = sqrt(6/650)
    const double b = xavier_bound({400, 250});
    CHECK(t.value().abs().maxCoeff() <= b);
    CHECK(std::abs(t.value().mean()) < 0.01);

    // every bias tensor in a built model is exactly zero
    Parameters p = build(tiny_model(), 302);
    for (const auto& [name, tb] : p.items)
        if (name.ends_with(".bias")) CHECK((tb.value() == 0.0).all());
}

TEST_CASE("sgd_nesterov_step: zero momentum reduces to plain SGD") {
    ModelConfig mc = tiny_model();
    Parameters p = build(mc, 311);
    OptimizerState opt;
    opt.momentum = 0.0;
    opt.learning_rate = 0.1;
    opt.init(p);

    Tensor& w = p.at("trunk.conv.weight");
    const Eigen::ArrayXd before = w.value();
    for (auto& [name, t] : p.items)
        if (!Parameters::is_running_stat(name)) t.grad().setConstant(0.5);
    sgd_nesterov_step(p, opt);
    CHECK((w.value() - (before - 0.05)).abs().maxCoeff() < 1e-15);
}

TEST_CASE("sgd_nesterov_step: two steps of constant gradient follow the recurrence") {
    // oracle: unroll v <- mu*v - lr*g; w <- w + mu*v - lr*g by hand
    const double mu = 0.9, lr = 0.01, g = 2.0;
    double v = 0.0, w_expect = 1.0;
    for (int i = 0; i < 2; ++i) {
        v = mu * v - lr * g;
        w_expect += mu * v - lr * g;
    }
    // total displacement lr*g*(2 + 2mu + mu^2)
    CHECK(1.0 - w_expect == doctest::Approx(lr * g * (2.0 + 2.0 * mu + mu * mu)).epsilon(1e-12));

    ModelConfig mc = tiny_model();
    Parameters p = build(mc, 321);
    OptimizerState opt;
    opt.momentum = mu;
    opt.learning_rate = lr;
    opt.init(p);
    Tensor& w = p.at("cls.head.weight");
    const double before = w.value()[0];
    for (int i = 0; i < 2; ++i) {
        for (auto& [name, t] : p.items)
            if (!Parameters::is_running_stat(name)) t.grad().setConstant(g);
        sgd_nesterov_step(p, opt);
    }
    CHECK(before - w.value()[0] == doctest::Approx(lr * g * (2.0 + 2.0 * mu + mu * mu)));
}

TEST_CASE("sgd_nesterov_step: frozen parameters untouched, missing grads rejected") {
    Parameters p = build(tiny_model(), 331);
    OptimizerState opt;
    opt.init(p);
    opt.learning_rate = 0.1;

    const std::vector<std::string> frozen = {"det.", "trunk."};
    for (auto& [name, t] : p.items)
        if (!Parameters::is_running_stat(name) && !name_is_frozen(name, &frozen))
            t.grad().setConstant(1.0);

    const Eigen::ArrayXd det_before = p.at("det.head.weight").value();
    const Eigen::ArrayXd m1_before = p.at("m1.b0.conv1.weight").value();
    sgd_nesterov_step(p, opt, &frozen);
    CHECK((p.at("det.head.weight").value() == det_before).all());
    CHECK((p.at("m1.b0.conv1.weight").value() != m1_before).any());

    Parameters q = build(tiny_model(), 332);
    OptimizerState opt2;
    opt2.init(q);
    CHECK_THROWS_AS(sgd_nesterov_step(q, opt2), std::runtime_error);
}

TEST_CASE("lr_schedule: paper-scale breakpoints and proportional scaling") {
    CHECK(lr_schedule(0) == doctest::Approx(0.01));
    CHECK(lr_schedule(99) == doctest::Approx(0.01));
    CHECK(lr_schedule(100) == doctest::Approx(0.001));
    CHECK(lr_schedule(149) == doctest::Approx(0.001));
    CHECK(lr_schedule(150) == doctest::Approx(0.0001));
    CHECK(lr_schedule(500) == doctest::Approx(0.0001));

    // desk-scale stage budget of 30: breakpoint at 20
    CHECK(lr_schedule(0, 30) == doctest::Approx(0.01));
    CHECK(lr_schedule(19, 30) == doctest::Approx(0.01));
    CHECK(lr_schedule(20, 30) == doctest::Approx(0.001));
    CHECK(lr_schedule(30, 30) == doctest::Approx(0.0001));
    CHECK_THROWS_AS(lr_schedule(-1), std::invalid_argument);
}

TEST_CASE("regime construction: stages, freezes, and gates") {
    const std::vector<int> budgets = {30, 30, 40};

    Regime full = Regime::make(RegimeKind::opi_full, budgets);
    REQUIRE(full.stages.size() == 3);
    CHECK(full.stages[0].use_det_loss);
    CHECK_FALSE(full.stages[0].use_cls_loss);
    CHECK(full.stages[1].freeze_prefixes ==
          std::vector<std::string>{"trunk.", "m1.", "m2.", "m3.", "det."});
    CHECK(full.stages[2].freeze_prefixes.empty());
    CHECK(full.stages[2].opi_product);

    Regime one = Regime::make(RegimeKind::opi_stage1_only, budgets);
    REQUIRE(one.stages.size() == 2);
    CHECK(one.stages[1].epochs == 70);

    Regime two = Regime::make(RegimeKind::opi_skip_clspretrain, budgets);
    REQUIRE(two.stages.size() == 2);
    CHECK(two.stages[1].use_det_loss);
    CHECK(two.stages[1].use_cls_loss);

    Regime sf = Regime::make(RegimeKind::sfcn, budgets);
    REQUIRE(sf.stages.size() == 1);
    CHECK(sf.stages[0].epochs == 100);
    CHECK(sf.stages[0].gate == ClsGate::ground_truth);
    CHECK_FALSE(sf.stages[0].opi_product);

    Regime f5 = Regime::make(RegimeKind::fcn5cls, budgets);
    CHECK(f5.arch == Arch::fcn5cls);
    CHECK(f5.stages[0].gate == ClsGate::all_pixels);

    CHECK(regime_from_name("opi_full") == RegimeKind::opi_full);
    CHECK_THROWS_AS(regime_from_name("nope"), std::invalid_argument);
}

TEST_CASE("run_regime: stage 2 leaves trunk and detection parameters bitwise unchanged") {
    auto images = generate(tiny_synth(), 6, 401);
    std::vector<AnnotatedImage> val;

    std::map<int, std::map<std::string, Eigen::ArrayXd>> stage_snaps;
    TrainHooks hooks;
    hooks.on_stage_end = [&](int stage, const Parameters& p) { stage_snaps[stage] = snapshot(p); };

    Regime regime = Regime::make(RegimeKind::opi_full, {1, 1, 1});
    TrainResult res = run_regime(regime, images, val, tiny_model(), ObjectiveConfig{},
                                 tiny_train(), 402, 3, hooks);

    REQUIRE(stage_snaps.count(1));
    REQUIRE(stage_snaps.count(2));
    const auto& s1 = stage_snaps[1];
    const auto& s2 = stage_snaps[2];
    for (const auto& [name, vals] : s1) {
        const bool shared_or_det = name.rfind("trunk.", 0) == 0 || name.rfind("m1.", 0) == 0 ||
                                   name.rfind("m2.", 0) == 0 || name.rfind("m3.", 0) == 0 ||
                                   name.rfind("det.", 0) == 0;
        if (shared_or_det) {
            INFO(name);
            CHECK((s2.at(name) == vals).all());  // bitwise, running stats included
        }
    }
    // classification branch did move in stage 2
    CHECK((s2.at("cls.head.weight") != s1.at("cls.head.weight")).any());

    // per-step log rows with monotonically increasing step index
    REQUIRE_FALSE(res.log.empty());
    for (std::size_t i = 0; i < res.log.size(); ++i)
        CHECK(res.log[i].step == static_cast<long>(i));
    CHECK(res.log.front().stage == 1);
    CHECK(res.log.back().stage == 3);
}

TEST_CASE("run_regime: freeze soundness of gradients in stage 1") {
    auto images = generate(tiny_synth(), 4, 411);

    // one manual stage-1 step mirrors the engine's wiring
    Parameters p = build(tiny_model(), 412);
    const std::vector<std::string> frozen = {"m4.", "cls."};
    for (auto& [name, t] : p.items) {
        if (Parameters::is_running_stat(name)) continue;
        t.set_requires_grad(!name_is_frozen(name, &frozen));
    }
    Tape tape;
    MaskPair masks = make_masks(images[0].nuclei, 16, 16, 3);
    ForwardOutputs out = forward(tape, p, images[0].pixels, {.train = true,
                                                            .frozen_prefixes = &frozen});
    Tensor loss = ops::detection_loss(tape, out.det_probs, masks.det_mask, 2.0);
    tape.backward(loss);

    for (const auto& [name, t] : p.items) {
        if (Parameters::is_running_stat(name)) continue;
        INFO(name);
        if (name_is_frozen(name, &frozen)) {
            CHECK((!t.has_grad() || t.grad().abs().maxCoeff() == 0.0));
        } else if (!Parameters::is_bias_like(name) || name.find(".bn") != std::string::npos ||
                   name.ends_with(".bias")) {
            CHECK(t.has_grad());
        }
    }
    // detection-path parameters actually received signal
    CHECK(p.at("det.head.weight").grad().abs().maxCoeff() > 0.0);
    CHECK(p.at("trunk.conv.weight").grad().abs().maxCoeff() > 0.0);
}

TEST_CASE("run_regime: determinism of final parameters and training log") {
    auto images = generate(tiny_synth(), 5, 421);
    Regime regime = Regime::make(RegimeKind::sfcn, {1, 1, 0});
    TrainResult a = run_regime(regime, images, {}, tiny_model(), ObjectiveConfig{}, tiny_train(),
                               422, 3);
    TrainResult b = run_regime(regime, images, {}, tiny_model(), ObjectiveConfig{}, tiny_train(),
                               422, 3);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i)
        CHECK(a.log[i].loss.loss_total == b.log[i].loss.loss_total);  // bitwise
    for (const auto& [name, t] : a.params.items)
        CHECK((t.value() == b.params.at(name).value()).all());
}

TEST_CASE("run_regime: fcn5cls trains without any detection parameters") {
    auto images = generate(tiny_synth(), 4, 431);
    Regime regime = Regime::make(RegimeKind::fcn5cls, {1, 0, 0});
    TrainResult res = run_regime(regime, images, {}, tiny_model(), ObjectiveConfig{}, tiny_train(),
                                 432, 3);
    for (const auto& [name, t] : res.params.items) CHECK(name.rfind("det.", 0) != 0);
    CHECK(res.params.config.arch == Arch::fcn5cls);
}

TEST_CASE("overfit smoke: 50 stage-1 steps on a fixed batch halve the detection loss") {
    auto images = generate(tiny_synth(), 2, 441);
    Parameters p = build(tiny_model(), 442);
    const std::vector<std::string> frozen = {"m4.", "cls."};
    for (auto& [name, t] : p.items)
        if (!Parameters::is_running_stat(name))
            t.set_requires_grad(!name_is_frozen(name, &frozen));

    std::vector<MaskPair> masks;
    for (const auto& img : images) masks.push_back(make_masks(img.nuclei, 16, 16, 3));
    const double alpha = 4.0;

    OptimizerState opt;
    opt.learning_rate = 0.01;
    opt.init(p);

    double first = 0.0, last = 0.0;
    Tape tape;
    for (int step = 0; step < 50; ++step) {
        tape.clear();
        for (auto& [name, t] : p.items)
            if (t.requires_grad()) t.grad().setZero();
        std::vector<std::pair<double, Tensor>> parts;
        for (std::size_t i = 0; i < images.size(); ++i) {
            ForwardOutputs out =
                forward(tape, p, images[i].pixels, {.train = true, .frozen_prefixes = &frozen});
            parts.emplace_back(0.5, ops::detection_loss(tape, out.det_probs, masks[i].det_mask,
                                                        alpha));
        }
        Tensor total = ops::linear_combination(tape, parts);
        if (step == 0) first = total.item();
        last = total.item();
        tape.backward(total);
        sgd_nesterov_step(p, opt, &frozen);
    }
    CHECK(last < 0.5 * first);
}

TEST_CASE("run_regime: empty training split rejected") {
    CHECK_THROWS_AS(run_regime(Regime::make(RegimeKind::opi_full, {1, 1, 1}), {}, {}, tiny_model(),
                               ObjectiveConfig{}, tiny_train(), 1, 3),
                    std::invalid_argument);
}

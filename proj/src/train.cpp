#include "sfcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sfcn {

void OptimizerState::init(const Parameters& params) {
    velocity.clear();
    for (const auto& [name, t] : params.items)
        if (!Parameters::is_running_stat(name)) velocity[name] = Tensor::zeros(t.shape());
}

void sgd_nesterov_step(Parameters& params, OptimizerState& state,
                       const std::vector<std::string>* frozen_prefixes) {
    const double mu = state.momentum;
    const double lr = state.learning_rate;
    for (auto& [name, w] : params.items) {
        if (Parameters::is_running_stat(name)) continue;
        if (name_is_frozen(name, frozen_prefixes)) continue;
        if (!w.has_grad())
            throw std::runtime_error("sgd step: missing gradient on non-frozen parameter " + name);
        Tensor& v = state.velocity.at(name);
        v.value() = mu * v.value() - lr * w.grad();
        w.value() += mu * v.value() - lr * w.grad();
    }
}

double lr_schedule(int epoch, int budget) {
    if (epoch < 0) throw std::invalid_argument("lr_schedule: epoch must be >= 0");
    if (budget < 1) throw std::invalid_argument("lr_schedule: budget must be >= 1");
    const int b1 = static_cast<int>(std::llround(budget * 100.0 / 150.0));
    if (epoch < b1) return 0.01;
    if (epoch < budget) return 0.001;
    return 0.0001;
}

RegimeKind regime_from_name(const std::string& name) {
    if (name == "fcn5cls") return RegimeKind::fcn5cls;
    if (name == "sfcn") return RegimeKind::sfcn;
    if (name == "opi_stage1_only") return RegimeKind::opi_stage1_only;
    if (name == "opi_skip_clspretrain") return RegimeKind::opi_skip_clspretrain;
    if (name == "opi_full") return RegimeKind::opi_full;
    throw std::invalid_argument("unknown regime: " + name);
}

std::string regime_name(RegimeKind kind) {
    switch (kind) {
        case RegimeKind::fcn5cls: return "fcn5cls";
        case RegimeKind::sfcn: return "sfcn";
        case RegimeKind::opi_stage1_only: return "opi_stage1_only";
        case RegimeKind::opi_skip_clspretrain: return "opi_skip_clspretrain";
        case RegimeKind::opi_full: return "opi_full";
    }
    throw std::logic_error("bad regime kind");
}

std::vector<std::string> all_regime_names() {
    return {"fcn5cls", "sfcn", "opi_stage1_only", "opi_skip_clspretrain", "opi_full"};
}

namespace {

const std::vector<std::string> kClsBranch = {"m4.", "cls."};
const std::vector<std::string> kSharedAndDet = {"trunk.", "m1.", "m2.", "m3.", "det."};

StagePlan det_pretrain_stage(int epochs) {
    StagePlan s;
    s.epochs = epochs;
    s.freeze_prefixes = kClsBranch;
    s.use_det_loss = true;
    s.use_cls_loss = false;
    return s;
}

StagePlan cls_pretrain_stage(int epochs) {
    StagePlan s;
    s.epochs = epochs;
    s.freeze_prefixes = kSharedAndDet;
    s.use_det_loss = false;
    s.use_cls_loss = true;
    s.gate = ClsGate::objectness;
    s.opi_product = true;
    return s;
}

StagePlan joint_stage(int epochs) {
    StagePlan s;
    s.epochs = epochs;
    s.use_det_loss = true;
    s.use_cls_loss = true;
    s.gate = ClsGate::objectness;
    s.opi_product = true;
    return s;
}

}  // namespace

Regime Regime::make(RegimeKind kind, const std::vector<int>& stage_epochs) {
    if (stage_epochs.size() != 3)
        throw std::invalid_argument("regime: need three stage epoch budgets");
    const int e1 = stage_epochs[0], e2 = stage_epochs[1], e3 = stage_epochs[2];
    const int total = e1 + e2 + e3;

    Regime r;
    r.kind = kind;
    switch (kind) {
        case RegimeKind::opi_full:
            r.stages = {det_pretrain_stage(e1), cls_pretrain_stage(e2), joint_stage(e3)};
            break;
        case RegimeKind::opi_stage1_only:
            r.stages = {det_pretrain_stage(e1), cls_pretrain_stage(e2 + e3)};
            break;
        case RegimeKind::opi_skip_clspretrain:
            r.stages = {det_pretrain_stage(e1), joint_stage(e2 + e3)};
            break;
        case RegimeKind::sfcn: {
            StagePlan s = joint_stage(total);
            s.gate = ClsGate::ground_truth;
            s.opi_product = false;
            r.stages = {s};
            break;
        }
        case RegimeKind::fcn5cls: {
            r.arch = Arch::fcn5cls;
            StagePlan s;
            s.epochs = total;
            s.use_det_loss = false;
            s.use_cls_loss = true;
            s.gate = ClsGate::all_pixels;
            s.opi_product = false;
            r.stages = {s};
            break;
        }
    }
    return r;
}

namespace {

struct TrainSample {
    Tensor image;
    MaskPair masks;
};

// per-epoch samples: augmentation draw seeded by (epoch, image index)
std::vector<TrainSample> epoch_samples(const std::vector<AnnotatedImage>& images,
                                       const std::array<double, 3>& fill, int patch_size,
                                       int mask_radius, std::uint64_t master_seed,
                                       int global_epoch) {
    std::vector<TrainSample> samples;
    for (std::size_t i = 0; i < images.size(); ++i) {
        Tensor img = images[i].pixels.clone();
        MaskPair masks = make_masks(images[i].nuclei, img.dim(1), img.dim(2), mask_radius);
        Rng rng(derive_seed(master_seed, seed_stream::augment,
                            (static_cast<std::uint64_t>(global_epoch) << 32) | i));
        augment(rng, fill, img, masks);
        for (auto& patch : crop_patches(img, masks, patch_size, patch_size))
            samples.push_back({patch.image, patch.masks});
    }
    Rng shuffle_rng(derive_seed(master_seed, seed_stream::shuffle,
                                static_cast<std::uint64_t>(global_epoch)));
    shuffle_rng.shuffle(samples);
    return samples;
}

Tensor ones_like(const Tensor& t) { return Tensor::full(t.shape(), 1.0); }

}  // namespace

TrainResult run_regime(const Regime& regime, const std::vector<AnnotatedImage>& train_images,
                       const std::vector<AnnotatedImage>& val_images, ModelConfig model_config,
                       const ObjectiveConfig& objective_config, const TrainConfig& train_config,
                       std::uint64_t master_seed, int mask_radius, const TrainHooks& hooks) {
    if (train_images.empty()) throw std::invalid_argument("run_regime: empty training split");
    model_config.arch = regime.arch;
    model_config.image_height = train_config.patch_size;
    model_config.image_width = train_config.patch_size;
    model_config.validate();
    objective_config.validate(model_config.num_categories);

    TrainResult result;
    result.params = build(model_config, master_seed);

    OptimizerState opt;
    opt.momentum = train_config.momentum;
    opt.init(result.params);

    // class-balance weights from the raw training split (per-epoch values are
    // identical because the raw split is fixed)
    std::vector<Tensor> det_masks, cls_masks;
    for (const auto& img : train_images) {
        MaskPair mp = make_masks(img.nuclei, img.pixels.dim(1), img.pixels.dim(2), mask_radius);
        det_masks.push_back(mp.det_mask);
        cls_masks.push_back(mp.cls_mask);
    }
    const double alpha =
        objective_config.alpha_auto ? auto_alpha(det_masks) : objective_config.alpha_fixed;
    Eigen::ArrayXd gamma;
    if (objective_config.gamma_auto) {
        gamma = auto_gamma(cls_masks, model_config.num_categories);
    } else {
        gamma = Eigen::Map<const Eigen::ArrayXd>(
            objective_config.gamma_fixed.data(),
            static_cast<Eigen::Index>(objective_config.gamma_fixed.size()));
    }

    const std::array<double, 3> fill = {0.8, 0.76, 0.84};  // background-like augmentation fill

    int total_epochs = 0;
    for (const auto& st : regime.stages) total_epochs += st.epochs;

    long step = 0;
    int global_epoch = 0;
    Tape tape;
    for (std::size_t stage_idx = 0; stage_idx < regime.stages.size(); ++stage_idx) {
        const StagePlan& stage = regime.stages[stage_idx];
        const std::vector<std::string>* frozen =
            stage.freeze_prefixes.empty() ? nullptr : &stage.freeze_prefixes;

        for (auto& [name, t] : result.params.items) {
            if (Parameters::is_running_stat(name)) continue;
            const bool active = !name_is_frozen(name, frozen);
            t.set_requires_grad(active);
            if (!active) t.drop_grad();
        }
        // fresh momentum per stage
        for (auto& [name, v] : opt.velocity) v.value().setZero();

        std::vector<Tensor> decayed;
        for (const auto& [name, t] : result.params.items)
            if (Parameters::is_decayed(name) && !name_is_frozen(name, frozen))
                decayed.push_back(t);

        for (int epoch = 0; epoch < stage.epochs; ++epoch, ++global_epoch) {
            // one schedule across the whole staged run
            opt.learning_rate = lr_schedule(global_epoch, total_epochs);
            std::vector<TrainSample> samples =
                epoch_samples(train_images, fill, train_config.patch_size, mask_radius,
                              master_seed, global_epoch);

            for (std::size_t batch_start = 0; batch_start < samples.size();
                 batch_start += static_cast<std::size_t>(train_config.batch_size)) {
                const std::size_t batch_end =
                    std::min(samples.size(),
                             batch_start + static_cast<std::size_t>(train_config.batch_size));

                tape.clear();
                // ensure buffers exist: a closed gate can leave some active
                // parameters without any recorded contribution
                for (auto& [name, t] : result.params.items)
                    if (t.requires_grad()) t.grad().setZero();

                JointLossBuilder builder(objective_config, alpha, gamma);
                ForwardOptions fwd_opts{.train = true, .frozen_prefixes = frozen};
                for (std::size_t s = batch_start; s < batch_end; ++s) {
                    const TrainSample& sample = samples[s];
                    ForwardOutputs out = forward(tape, result.params, sample.image, fwd_opts);
                    if (stage.use_det_loss)
                        builder.add_detection(tape, out.det_probs, sample.masks.det_mask);
                    if (stage.use_cls_loss) {
                        Tensor p_cls = out.cls_cond_probs;
                        Tensor gate;
                        if (stage.opi_product) {
                            Tensor p_obj = ops::slice_channel(tape, out.det_probs, 1);
                            p_cls = ops::combine_opi(tape, p_obj, out.cls_cond_probs);
                            gate = ops::objectness_gate(p_obj, objective_config.t_p);
                        } else if (stage.gate == ClsGate::ground_truth) {
                            gate = sample.masks.det_mask;
                        } else {
                            gate = ones_like(sample.masks.det_mask);
                        }
                        builder.add_classification(tape, p_cls, gate, sample.masks.cls_mask);
                    }
                }

                LossReport report;
                Tensor total = builder.finalize(tape, decayed, report);
                if (!std::isfinite(report.loss_total)) throw DivergenceError(step);
                tape.backward(total);
                sgd_nesterov_step(result.params, opt, frozen);

                result.log.push_back({step, static_cast<int>(stage_idx) + 1,
                                      opt.learning_rate, report});
                ++step;
            }

            const bool last_epoch_of_run = stage_idx + 1 == regime.stages.size() &&
                                           epoch + 1 == stage.epochs;
            if (hooks.on_validation && !val_images.empty() && train_config.val_interval > 0 &&
                ((global_epoch + 1) % train_config.val_interval == 0 || last_epoch_of_run)) {
                EvalOutcome val = evaluate_model(result.params, val_images);
                const double score = val.report.detection.f1 + val.report.weighted.f1;
                if (score > result.best_val_score) result.best_val_score = score;
                hooks.on_validation(global_epoch, result.params, val.report);
            }
        }
        if (hooks.on_stage_end) hooks.on_stage_end(static_cast<int>(stage_idx) + 1, result.params);
    }

    for (auto& [name, t] : result.params.items)
        if (!Parameters::is_running_stat(name)) t.set_requires_grad(true);
    return result;
}

}  // namespace sfcn

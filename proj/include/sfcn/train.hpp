#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sfcn/data.hpp"
#include "sfcn/evaluate.hpp"
#include "sfcn/init.hpp"
#include "sfcn/model.hpp"
#include "sfcn/objective.hpp"

namespace sfcn {

struct OptimizerState {
    double momentum = 0.9;
    double learning_rate = 0.01;
    std::map<std::string, Tensor> velocity;

    void init(const Parameters& params);
};

// Nesterov update: v <- mu*v - lr*g; w <- w + mu*v - lr*g. Frozen parameters
// are untouched; a missing gradient on a non-frozen parameter is an error.
void sgd_nesterov_step(Parameters& params, OptimizerState& state,
                       const std::vector<std::string>* frozen_prefixes = nullptr);

// Step schedule 0.01 / 0.001 / 0.0001 with breakpoints at epochs 100 and 150
// for the paper-scale budget of 150; other budgets scale the breakpoints
// proportionally.
double lr_schedule(int epoch, int budget = 150);

enum class RegimeKind { fcn5cls, sfcn, opi_stage1_only, opi_skip_clspretrain, opi_full };

RegimeKind regime_from_name(const std::string& name);
std::string regime_name(RegimeKind kind);
std::vector<std::string> all_regime_names();

enum class ClsGate { objectness, ground_truth, all_pixels };

struct StagePlan {
    int epochs = 0;
    std::vector<std::string> freeze_prefixes;
    bool use_det_loss = true;
    bool use_cls_loss = true;
    ClsGate gate = ClsGate::objectness;
    bool opi_product = true;  // gate and loss read p_obj-combined maps
};

struct Regime {
    RegimeKind kind = RegimeKind::opi_full;
    Arch arch = Arch::sibling;
    std::vector<StagePlan> stages;

    // stage_epochs are the three staged budgets; single- and two-stage
    // regimes fold the remaining budget into their last stage.
    static Regime make(RegimeKind kind, const std::vector<int>& stage_epochs);
};

struct TrainConfig {
    int batch_size = 16;
    std::vector<int> stage_epochs = {30, 30, 40};
    double momentum = 0.9;
    int patch_size = 32;
    int val_interval = 10;  // epochs between validation passes; 0 disables
};

struct TrainLogRow {
    long step = 0;
    int stage = 0;
    double lr = 0.0;
    LossReport loss;
};

struct TrainHooks {
    std::function<void(int stage_index, const Parameters&)> on_stage_end;
    std::function<void(int global_epoch, const Parameters&, const MetricsReport&)> on_validation;
};

struct TrainResult {
    Parameters params;
    std::vector<TrainLogRow> log;
    double best_val_score = -1.0;
};

// Aborts when the loss leaves the reals; carries the offending step.
struct DivergenceError : std::runtime_error {
    long step;
    explicit DivergenceError(long s)
        : std::runtime_error("training diverged: non-finite loss at step " + std::to_string(s)),
          step(s) {}
};

TrainResult run_regime(const Regime& regime, const std::vector<AnnotatedImage>& train_images,
                       const std::vector<AnnotatedImage>& val_images, ModelConfig model_config,
                       const ObjectiveConfig& objective_config, const TrainConfig& train_config,
                       std::uint64_t master_seed, int mask_radius = 3,
                       const TrainHooks& hooks = {});

}  // namespace sfcn

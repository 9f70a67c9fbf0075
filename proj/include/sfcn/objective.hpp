#pragma once

#include <Eigen/Core>

#include <utility>
#include <vector>

#include "sfcn/model.hpp"
#include "sfcn/ops.hpp"

namespace sfcn {

struct ObjectiveConfig {
    double t_p = 0.8;       // objectness gate threshold
    double lambda = 1.0;    // classification weight in the joint loss
    double beta = 1e-4;     // weight decay
    bool alpha_auto = true;
    bool gamma_auto = true;
    double alpha_fixed = 1.0;
    std::vector<double> gamma_fixed;  // size K+1 when gamma_auto is false

    void validate(int num_categories) const;
};

struct LossReport {
    double loss_det = 0.0;
    double loss_cls = 0.0;    // the (1/N_cls) * sum term, before lambda
    double loss_decay = 0.0;
    double loss_total = 0.0;
    long n_pixels = 0;   // N of the detection loss
    long n_cls = 0;      // gate-passing pixel count
    bool gate_closed = false;
};

// Class-imbalance weight for the detection loss: negatives over positives,
// clamped to [0.1, 100].
double auto_alpha(const std::vector<Tensor>& det_masks);

// Per-class weights from label-pixel proportions, clamped to [0.1, 100];
// uniform counts give all-ones.
Eigen::ArrayXd auto_gamma(const std::vector<Tensor>& cls_masks, int num_categories);

// Spec-facing single-map wrapper over ops::classification_loss_terms:
// returns the gate-normalized loss and the gate count.
std::pair<Tensor, long> classification_loss(Tape& tape, const Tensor& p_cls, const Tensor& p_obj,
                                            const Tensor& cls_mask, double t_p,
                                            const Eigen::ArrayXd& gamma);

// Accumulates per-patch detection losses and gated classification terms for
// one optimization step, then finalizes the Eq.-4 style total.
class JointLossBuilder {
public:
    JointLossBuilder(const ObjectiveConfig& cfg, double alpha, Eigen::ArrayXd gamma)
        : cfg_(cfg), alpha_(alpha), gamma_(std::move(gamma)) {}

    void add_detection(Tape& tape, const Tensor& det_probs, const Tensor& det_mask);
    // gate: 0/1 map, a constant in backward
    void add_classification(Tape& tape, const Tensor& p_cls, const Tensor& gate,
                            const Tensor& cls_mask);

    // total = mean(det) + lambda * (sum cls)/max(N_cls,1) + beta * ||W||^2
    // over the given decayed weights. Populates the report.
    Tensor finalize(Tape& tape, const std::vector<Tensor>& decayed_weights, LossReport& report);

    double alpha() const { return alpha_; }
    const Eigen::ArrayXd& gamma() const { return gamma_; }

private:
    ObjectiveConfig cfg_;
    double alpha_;
    Eigen::ArrayXd gamma_;
    std::vector<Tensor> det_losses_;
    std::vector<Tensor> cls_sums_;
    long n_cls_ = 0;
    long n_pixels_ = 0;
    bool has_cls_terms_ = false;
};

// Single-batch convenience used by tests: one image worth of maps.
LossReport joint_loss(Tape& tape, const Tensor& det_probs, const Tensor& det_mask,
                      const Tensor& cls_cond_probs, const Tensor& cls_mask,
                      const Parameters& params, const ObjectiveConfig& cfg, Tensor* total_out);

}  // namespace sfcn

#include "sfcn/objective.hpp"

#include <algorithm>
#include <stdexcept>

namespace sfcn {

void ObjectiveConfig::validate(int num_categories) const {
    if (!(t_p > 0.0 && t_p < 1.0)) throw std::invalid_argument("objective: need 0 < t_p < 1");
    if (lambda < 0.0) throw std::invalid_argument("objective: lambda must be >= 0");
    if (beta < 0.0) throw std::invalid_argument("objective: beta must be >= 0");
    if (!alpha_auto && !(alpha_fixed > 0.0))
        throw std::invalid_argument("objective: fixed alpha must be positive");
    if (!gamma_auto) {
        if (static_cast<int>(gamma_fixed.size()) != num_categories + 1)
            throw std::invalid_argument("objective: fixed gamma must have K+1 entries");
        for (double g : gamma_fixed)
            if (!(g > 0.0)) throw std::invalid_argument("objective: gamma entries must be positive");
    }
}

namespace {
constexpr double kWeightClampLo = 0.1;
constexpr double kWeightClampHi = 100.0;
}  // namespace

double auto_alpha(const std::vector<Tensor>& det_masks) {
    if (det_masks.empty()) throw std::invalid_argument("auto_alpha: empty batch");
    long pos = 0, total = 0;
    for (const auto& m : det_masks) {
        pos += static_cast<long>((m.value() != 0.0).count());
        total += m.size();
    }
    const long neg = total - pos;
    const double a = static_cast<double>(neg) / static_cast<double>(std::max(pos, 1L));
    return std::clamp(a, kWeightClampLo, kWeightClampHi);
}

Eigen::ArrayXd auto_gamma(const std::vector<Tensor>& cls_masks, int num_categories) {
    if (cls_masks.empty()) throw std::invalid_argument("auto_gamma: empty batch");
    const int kk = num_categories + 1;
    Eigen::ArrayXd counts = Eigen::ArrayXd::Zero(kk);
    long total = 0;
    for (const auto& m : cls_masks) {
        total += m.size();
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            const int c = static_cast<int>(m.value()[i]);
            if (c < 0 || c >= kk)
                throw std::invalid_argument("auto_gamma: class label out of range");
            counts[c] += 1.0;
        }
    }
    Eigen::ArrayXd gamma(kk);
    for (int c = 0; c < kk; ++c) {
        const double denom = std::max(counts[c], 1.0) * kk;
        gamma[c] = std::clamp(static_cast<double>(total) / denom, kWeightClampLo, kWeightClampHi);
    }
    return gamma;
}

std::pair<Tensor, long> classification_loss(Tape& tape, const Tensor& p_cls, const Tensor& p_obj,
                                            const Tensor& cls_mask, double t_p,
                                            const Eigen::ArrayXd& gamma) {
    Tensor gate = ops::objectness_gate(p_obj, t_p);
    auto terms = ops::classification_loss_terms(tape, p_cls, gate, cls_mask, gamma);
    const double inv = 1.0 / static_cast<double>(std::max(terms.count, 1L));
    Tensor mean = ops::linear_combination(tape, {{inv, terms.sum}});
    return {mean, terms.count};
}

void JointLossBuilder::add_detection(Tape& tape, const Tensor& det_probs,
                                     const Tensor& det_mask) {
    det_losses_.push_back(ops::detection_loss(tape, det_probs, det_mask, alpha_));
    n_pixels_ += det_mask.size();
}

void JointLossBuilder::add_classification(Tape& tape, const Tensor& p_cls, const Tensor& gate,
                                          const Tensor& cls_mask) {
    auto terms = ops::classification_loss_terms(tape, p_cls, gate, cls_mask, gamma_);
    cls_sums_.push_back(terms.sum);
    n_cls_ += terms.count;
    has_cls_terms_ = true;
}

Tensor JointLossBuilder::finalize(Tape& tape, const std::vector<Tensor>& decayed_weights,
                                  LossReport& report) {
    std::vector<std::pair<double, Tensor>> parts;

    report = LossReport{};
    report.n_pixels = n_pixels_;
    report.n_cls = n_cls_;

    if (!det_losses_.empty()) {
        const double w = 1.0 / static_cast<double>(det_losses_.size());
        for (const auto& d : det_losses_) {
            parts.emplace_back(w, d);
            report.loss_det += w * d.item();
        }
    }
    if (has_cls_terms_) {
        report.gate_closed = n_cls_ == 0;
        const double inv = 1.0 / static_cast<double>(std::max(n_cls_, 1L));
        for (const auto& s : cls_sums_) {
            parts.emplace_back(cfg_.lambda * inv, s);
            report.loss_cls += inv * s.item();
        }
    }
    Tensor decay = ops::weight_decay(tape, decayed_weights, cfg_.beta);
    report.loss_decay = decay.item();
    parts.emplace_back(1.0, decay);

    Tensor total = ops::linear_combination(tape, parts);
    report.loss_total = total.item();
    return total;
}

LossReport joint_loss(Tape& tape, const Tensor& det_probs, const Tensor& det_mask,
                      const Tensor& cls_cond_probs, const Tensor& cls_mask,
                      const Parameters& params, const ObjectiveConfig& cfg, Tensor* total_out) {
    cfg.validate(cls_cond_probs.dim(0) - 1);
    const double alpha = cfg.alpha_auto ? auto_alpha({det_mask}) : cfg.alpha_fixed;
    Eigen::ArrayXd gamma;
    if (cfg.gamma_auto) {
        gamma = auto_gamma({cls_mask}, cls_cond_probs.dim(0) - 1);
    } else {
        gamma = Eigen::Map<const Eigen::ArrayXd>(cfg.gamma_fixed.data(),
                                                 static_cast<Eigen::Index>(cfg.gamma_fixed.size()));
    }

    JointLossBuilder builder(cfg, alpha, gamma);
    builder.add_detection(tape, det_probs, det_mask);

    Tensor p_obj = ops::slice_channel(tape, det_probs, 1);
    Tensor p_cls = ops::combine_opi(tape, p_obj, cls_cond_probs);
    Tensor gate = ops::objectness_gate(p_obj, cfg.t_p);
    builder.add_classification(tape, p_cls, gate, cls_mask);

    std::vector<Tensor> decayed;
    for (const auto& [name, t] : params.items)
        if (Parameters::is_decayed(name)) decayed.push_back(t);

    LossReport report;
    Tensor total = builder.finalize(tape, decayed, report);
    if (total_out) *total_out = total;
    return report;
}

}  // namespace sfcn

#pragma once

#include <optional>
#include <vector>

#include "mmtod/geometry.hpp"
#include "mmtod/rng.hpp"
#include "mmtod/tensor.hpp"

namespace mmtod {

enum class AnchorLabel { kPositive, kNegative, kIgnore };

struct AnchorAssignment {
  std::vector<AnchorLabel> labels;                 // per anchor
  std::vector<std::optional<int>> matched_gt;      // per anchor, set iff positive
  int num_positive = 0;
  int num_negative = 0;
};

struct RpnLossConfig {
  double lambda = 10.0;
  int n_cls = 256;
  int n_reg = 0;  // 0 -> use number of anchor locations at call sites
  double pos_iou = 0.7;
  double neg_iou = 0.3;
  int batch_anchors = 256;
  double pos_fraction = 0.5;
};

enum class AdversarialForm { kLeastSquares, kCrossEntropy };

struct GanLossConfig {
  double cycle_weight = 10.0;
  double identity_weight = 0.0;
  AdversarialForm adversarial_form = AdversarialForm::kLeastSquares;
};

// Probability clamp applied before logs in the classification losses.
inline constexpr double kProbEpsilon = 1e-7;

// 0.5*x^2 for |x|<1, |x|-0.5 otherwise.
double smooth_l1(double x);
double smooth_l1_grad(double x);

// Anchor labeling per the Faster-RCNN convention: positive above pos_iou or
// argmax-per-GT; negative below neg_iou; then seeded subsampling down to
// batch_anchors with at most pos_fraction positives (dropped anchors become
// ignore). Empty gts -> all sampled anchors negative.
AnchorAssignment assign_rpn_targets(const std::vector<Box>& anchors,
                                    const std::vector<Box>& gts,
                                    const RpnLossConfig& cfg, Rng& rng);

// RPN objective: (1/N_cls) * sum L_cls(p_i, p*_i)
//              + lambda * (1/N_reg) * sum p*_i * L_reg(t_i, t*_i)
// L_cls is binary log loss over sampled anchors (probabilities clamped to
// [eps, 1-eps]); L_reg is smooth-L1 summed over the 4 deltas of positive
// anchors. gt_targets is indexed per anchor; only positive entries are read.
// Optional outputs receive d(loss)/d(prob) and d(loss)/d(delta).
double rpn_loss(const std::vector<double>& pred_obj,
                const std::vector<RegressionTarget>& pred_t,
                const AnchorAssignment& assign,
                const std::vector<RegressionTarget>& gt_targets,
                const RpnLossConfig& cfg,
                std::vector<double>* d_prob = nullptr,
                std::vector<RegressionTarget>* d_t = nullptr);

// Fast-RCNN multi-task head loss. class_probs: per RoI, distribution over
// background + K classes (background label 0). box_deltas: per RoI, 4 deltas
// per class. Cross-entropy plus smooth-L1 on the labeled class's deltas
// (non-background only), each term averaged over RoIs.
double detection_head_loss(const std::vector<std::vector<double>>& class_probs,
                           const std::vector<std::vector<RegressionTarget>>& box_deltas,
                           const std::vector<int>& roi_labels,
                           const std::vector<RegressionTarget>& roi_gt_targets,
                           std::vector<std::vector<double>>* d_probs = nullptr,
                           std::vector<std::vector<RegressionTarget>>* d_deltas = nullptr);

// Least-squares (default) or cross-entropy GAN loss over discriminator
// outputs; target 1 for real, 0 for fake.
double adversarial_loss(const std::vector<double>& d_out, bool target_is_real,
                        const GanLossConfig& cfg, std::vector<double>* d_grad = nullptr);
double adversarial_loss(const Tensor& d_out, bool target_is_real, const GanLossConfig& cfg,
                        Tensor* d_grad = nullptr);

// cycle_weight * mean absolute error over all elements. Throws on shape
// mismatch. Gradient is with respect to x_reconstructed.
double cycle_loss(const Tensor& x, const Tensor& x_reconstructed, const GanLossConfig& cfg,
                  Tensor* d_reconstructed = nullptr);

}  // namespace mmtod

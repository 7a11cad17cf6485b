#include "mmtod/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmtod {

double smooth_l1(double x) {
  double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0 ? 1.0 : -1.0;
}

AnchorAssignment assign_rpn_targets(const std::vector<Box>& anchors,
                                    const std::vector<Box>& gts, const RpnLossConfig& cfg,
                                    Rng& rng) {
  if (anchors.empty()) throw std::invalid_argument("assign_rpn_targets: no anchors");
  size_t na = anchors.size(), ng = gts.size();
  AnchorAssignment out;
  out.labels.assign(na, AnchorLabel::kIgnore);
  out.matched_gt.assign(na, std::nullopt);

  std::vector<double> max_iou(na, 0.0);
  std::vector<int> argmax_gt(na, -1);
  std::vector<double> gt_max_iou(ng, 0.0);
  for (size_t a = 0; a < na; ++a) {
    for (size_t g = 0; g < ng; ++g) {
      double v = iou(anchors[a], gts[g]);
      if (v > max_iou[a]) {
        max_iou[a] = v;
        argmax_gt[a] = static_cast<int>(g);
      }
      gt_max_iou[g] = std::max(gt_max_iou[g], v);
    }
  }

  for (size_t a = 0; a < na; ++a) {
    if (ng == 0) {
      out.labels[a] = AnchorLabel::kNegative;
      continue;
    }
    bool positive = max_iou[a] > cfg.pos_iou;
    if (!positive && max_iou[a] > 0) {
      // argmax rule: an anchor achieving some GT's best overlap is positive
      for (size_t g = 0; g < ng; ++g) {
        if (gt_max_iou[g] > 0 && iou(anchors[a], gts[g]) >= gt_max_iou[g] - 1e-12) {
          positive = true;
          argmax_gt[a] = static_cast<int>(g);
          break;
        }
      }
    }
    if (positive) {
      out.labels[a] = AnchorLabel::kPositive;
      out.matched_gt[a] = argmax_gt[a];
    } else if (max_iou[a] < cfg.neg_iou) {
      out.labels[a] = AnchorLabel::kNegative;
    }
  }

  // subsample to at most batch_anchors with at most pos_fraction positives
  std::vector<int> pos_idx, neg_idx;
  for (size_t a = 0; a < na; ++a) {
    if (out.labels[a] == AnchorLabel::kPositive) pos_idx.push_back(static_cast<int>(a));
    if (out.labels[a] == AnchorLabel::kNegative) neg_idx.push_back(static_cast<int>(a));
  }
  auto subsample = [&](std::vector<int>& idx, int keep) {
    if (static_cast<int>(idx.size()) <= keep) return;
    std::vector<int> perm = rng.permutation(static_cast<int>(idx.size()));
    for (size_t k = static_cast<size_t>(keep); k < perm.size(); ++k) {
      int a = idx[static_cast<size_t>(perm[k])];
      out.labels[static_cast<size_t>(a)] = AnchorLabel::kIgnore;
      out.matched_gt[static_cast<size_t>(a)] = std::nullopt;
    }
  };
  int max_pos = static_cast<int>(cfg.pos_fraction * cfg.batch_anchors);
  subsample(pos_idx, max_pos);
  int kept_pos = 0;
  for (auto l : out.labels) kept_pos += (l == AnchorLabel::kPositive);
  subsample(neg_idx, cfg.batch_anchors - kept_pos);

  for (auto l : out.labels) {
    out.num_positive += (l == AnchorLabel::kPositive);
    out.num_negative += (l == AnchorLabel::kNegative);
  }
  return out;
}

double rpn_loss(const std::vector<double>& pred_obj,
                const std::vector<RegressionTarget>& pred_t, const AnchorAssignment& assign,
                const std::vector<RegressionTarget>& gt_targets, const RpnLossConfig& cfg,
                std::vector<double>* d_prob, std::vector<RegressionTarget>* d_t) {
  size_t na = pred_obj.size();
  if (pred_t.size() != na || assign.labels.size() != na || gt_targets.size() != na)
    throw std::invalid_argument("rpn_loss: size mismatch");
  if (cfg.n_cls <= 0 || cfg.n_reg <= 0)
    throw std::invalid_argument("rpn_loss: normalizers must be positive");
  if (d_prob) d_prob->assign(na, 0.0);
  if (d_t) d_t->assign(na, RegressionTarget{});

  double cls = 0.0, reg = 0.0;
  for (size_t i = 0; i < na; ++i) {
    AnchorLabel l = assign.labels[i];
    if (l == AnchorLabel::kIgnore) continue;
    double p = std::clamp(pred_obj[i], kProbEpsilon, 1.0 - kProbEpsilon);
    double target = (l == AnchorLabel::kPositive) ? 1.0 : 0.0;
    cls += -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
    if (d_prob) {
      bool clamped = pred_obj[i] < kProbEpsilon || pred_obj[i] > 1.0 - kProbEpsilon;
      (*d_prob)[i] = clamped ? 0.0 : (-target / p + (1.0 - target) / (1.0 - p)) / cfg.n_cls;
    }
    if (l == AnchorLabel::kPositive) {
      const auto& t = pred_t[i];
      const auto& g = gt_targets[i];
      double dx = t.tx - g.tx, dy = t.ty - g.ty, dw = t.tw - g.tw, dh = t.th - g.th;
      reg += smooth_l1(dx) + smooth_l1(dy) + smooth_l1(dw) + smooth_l1(dh);
      if (d_t) {
        double s = cfg.lambda / cfg.n_reg;
        (*d_t)[i] = {s * smooth_l1_grad(dx), s * smooth_l1_grad(dy), s * smooth_l1_grad(dw),
                     s * smooth_l1_grad(dh)};
      }
    }
  }
  return cls / cfg.n_cls + cfg.lambda * reg / cfg.n_reg;
}

double detection_head_loss(const std::vector<std::vector<double>>& class_probs,
                           const std::vector<std::vector<RegressionTarget>>& box_deltas,
                           const std::vector<int>& roi_labels,
                           const std::vector<RegressionTarget>& roi_gt_targets,
                           std::vector<std::vector<double>>* d_probs,
                           std::vector<std::vector<RegressionTarget>>* d_deltas) {
  size_t n = class_probs.size();
  if (box_deltas.size() != n || roi_labels.size() != n || roi_gt_targets.size() != n)
    throw std::invalid_argument("detection_head_loss: size mismatch");
  if (n == 0) return 0.0;
  if (d_probs) {
    d_probs->resize(n);
    for (size_t i = 0; i < n; ++i) (*d_probs)[i].assign(class_probs[i].size(), 0.0);
  }
  if (d_deltas) {
    d_deltas->resize(n);
    for (size_t i = 0; i < n; ++i)
      (*d_deltas)[i].assign(box_deltas[i].size(), RegressionTarget{});
  }

  double ce = 0.0, reg = 0.0;
  for (size_t i = 0; i < n; ++i) {
    int label = roi_labels[i];
    if (label < 0 || label >= static_cast<int>(class_probs[i].size()))
      throw std::invalid_argument("detection_head_loss: label out of range");
    double p = std::clamp(class_probs[i][static_cast<size_t>(label)], kProbEpsilon,
                          1.0 - kProbEpsilon);
    ce += -std::log(p);
    if (d_probs && class_probs[i][static_cast<size_t>(label)] >= kProbEpsilon)
      (*d_probs)[i][static_cast<size_t>(label)] = -1.0 / (p * static_cast<double>(n));
    if (label > 0) {  // background (0) contributes no regression loss
      const auto& t = box_deltas[i][static_cast<size_t>(label)];
      const auto& g = roi_gt_targets[i];
      double dx = t.tx - g.tx, dy = t.ty - g.ty, dw = t.tw - g.tw, dh = t.th - g.th;
      reg += smooth_l1(dx) + smooth_l1(dy) + smooth_l1(dw) + smooth_l1(dh);
      if (d_deltas) {
        double s = 1.0 / static_cast<double>(n);
        (*d_deltas)[i][static_cast<size_t>(label)] = {
            s * smooth_l1_grad(dx), s * smooth_l1_grad(dy), s * smooth_l1_grad(dw),
            s * smooth_l1_grad(dh)};
      }
    }
  }
  return (ce + reg) / static_cast<double>(n);
}

double adversarial_loss(const std::vector<double>& d_out, bool target_is_real,
                        const GanLossConfig& cfg, std::vector<double>* d_grad) {
  if (d_out.empty()) throw std::invalid_argument("adversarial_loss: empty output");
  size_t n = d_out.size();
  if (d_grad) d_grad->assign(n, 0.0);
  double target = target_is_real ? 1.0 : 0.0;
  double loss = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(d_out[i]))
      throw std::invalid_argument("adversarial_loss: non-finite output");
    if (cfg.adversarial_form == AdversarialForm::kLeastSquares) {
      double d = d_out[i] - target;
      loss += d * d;
      if (d_grad) (*d_grad)[i] = 2.0 * d / static_cast<double>(n);
    } else {
      double p = std::clamp(d_out[i], kProbEpsilon, 1.0 - kProbEpsilon);
      loss += -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
      if (d_grad)
        (*d_grad)[i] = (-target / p + (1.0 - target) / (1.0 - p)) / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

double adversarial_loss(const Tensor& d_out, bool target_is_real, const GanLossConfig& cfg,
                        Tensor* d_grad) {
  std::vector<double> v(d_out.data(), d_out.data() + d_out.numel());
  std::vector<double> g;
  double loss = adversarial_loss(v, target_is_real, cfg, d_grad ? &g : nullptr);
  if (d_grad) {
    *d_grad = Tensor(d_out.shape());
    std::copy(g.begin(), g.end(), d_grad->data());
  }
  return loss;
}

double cycle_loss(const Tensor& x, const Tensor& x_reconstructed, const GanLossConfig& cfg,
                  Tensor* d_reconstructed) {
  if (!x.same_shape(x_reconstructed))
    throw std::invalid_argument("cycle_loss: shape mismatch");
  size_t n = x.numel();
  if (n == 0) return 0.0;
  if (d_reconstructed) *d_reconstructed = Tensor(x.shape());
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = x_reconstructed[i] - x[i];
    sum += std::abs(d);
    if (d_reconstructed)
      (*d_reconstructed)[i] =
          cfg.cycle_weight * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / static_cast<double>(n);
  }
  return cfg.cycle_weight * sum / static_cast<double>(n);
}

}  // namespace mmtod

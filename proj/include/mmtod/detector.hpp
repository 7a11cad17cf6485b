#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmtod/eval.hpp"
#include "mmtod/geometry.hpp"
#include "mmtod/losses.hpp"
#include "mmtod/nn.hpp"
#include "mmtod/translator.hpp"

namespace mmtod {

struct DetectorConfig {
  int c_feat = 64;
  int backbone_stride = 8;
  std::vector<double> anchor_scales{1, 2, 4};
  std::vector<double> anchor_ratios{0.5, 1, 2};
  RpnLossConfig rpn;

  // proposal stage
  int train_pre_nms = 256;
  int train_post_nms = 32;
  int test_pre_nms = 256;
  int test_post_nms = 50;
  double proposal_nms_thresh = 0.7;
  double proposal_min_size = 2.0;

  // RoI head
  int roi_pool_size = 4;
  int head_hidden = 256;
  int rois_per_image = 32;
  double fg_fraction = 0.25;
  double roi_fg_iou = 0.5;
  double roi_bg_iou_hi = 0.5;

  // inference
  double score_thresh = 0.05;
  double final_nms_thresh = 0.3;
  int max_dets = 50;

  int num_classes = 3;  // foreground classes; background is label 0

  int anchors_per_cell() const {
    return static_cast<int>(anchor_scales.size() * anchor_ratios.size());
  }
  std::string to_json() const;
  static DetectorConfig from_json(const std::string& s);
  uint64_t hash() const;
};

// 4 conv stages, stride 8 overall.
class Backbone {
 public:
  Backbone(int in_channels, int c_feat, Rng& rng);
  int in_channels() const { return in_c_; }
  Tensor forward(const Tensor& image);
  Tensor backward(const Tensor& dfeat);
  ParamList params(const std::string& prefix);

 private:
  int in_c_;
  Sequential net_;
};

struct RpnOutput {
  std::vector<double> objectness;          // per anchor, sigmoid probabilities
  std::vector<RegressionTarget> deltas;    // per anchor
  int feat_h = 0, feat_w = 0;
};

// 3x3 shared conv + two 1x1 heads. Anchor index layout matches
// generate_anchors: (cell row-major) * A + (scale-major, ratio-minor).
class RpnHead {
 public:
  RpnHead(int c_feat, int anchors_per_cell, Rng& rng);
  RpnOutput forward(const Tensor& feat);
  // gradients w.r.t. probabilities and deltas; returns d(feat)
  Tensor backward(const std::vector<double>& d_prob,
                  const std::vector<RegressionTarget>& d_deltas);
  ParamList params(const std::string& prefix);

 private:
  int a_;
  Conv2d conv_shared_;
  ReLU relu_;
  Conv2d conv_logits_;
  Conv2d conv_deltas_;
  std::vector<double> probs_;  // cached for sigmoid backward
  int fh_ = 0, fw_ = 0;
};

struct RoiHeadOutput {
  std::vector<double> class_probs;         // K+1, softmax
  std::vector<RegressionTarget> deltas;    // per class, K+1 entries
};

class RoiHead {
 public:
  RoiHead(int c_feat, int pool_size, int hidden, int num_classes, Rng& rng);
  RoiHeadOutput forward(const Tensor& pooled);
  Tensor backward(const std::vector<double>& d_prob,
                  const std::vector<RegressionTarget>& d_deltas);
  ParamList params(const std::string& prefix);

 private:
  int k_;
  Linear fc1_;
  ReLU relu_;
  Linear fc_cls_;
  Linear fc_reg_;
  std::vector<double> probs_;  // cached softmax output
};

// Quantized max pooling of an image-coordinate RoI into a PxP grid.
// A RoI collapsing to zero feature cells is snapped to one cell; the
// snap counter (if given) is incremented.
Tensor roi_pool(const Tensor& feat, const Box& roi, double stride, int pool_size,
                std::vector<int>* argmax, int* snap_counter = nullptr);
void roi_pool_backward(const Tensor& d_pooled, const std::vector<int>& argmax, Tensor& d_feat);

struct Proposal {
  Box box;
  double score = 0;
};

struct ProposalConfig {
  int pre_nms_top_n = 256;
  int post_nms_top_n = 32;
  double nms_thresh = 0.7;
  double min_size = 2.0;
};

// decode deltas onto anchors, clip, drop sub-min_size boxes, take
// pre_nms_top_n by score, NMS, keep post_nms_top_n.
std::vector<Proposal> propose_rois(const std::vector<double>& objectness,
                                   const std::vector<RegressionTarget>& deltas,
                                   const std::vector<Box>& anchors, const ProposalConfig& cfg,
                                   ImageSize image);

enum class DetectorMode { kThermalOnlyBaseline, kMultimodal };

// Two-branch detector: per-branch backbone, channel stacking in
// [rgb ; thermal] order, 1x1 fusion conv (2C -> C), then RPN + RoI head.
// In baseline mode the RGB branch and fusion conv are absent.
class DetectorModel {
 public:
  // baseline_in_channels selects the single branch's input depth when mode
  // is baseline (1 for thermal, 3 when pre-training the RGB branch).
  DetectorModel(const DetectorConfig& cfg, DetectorMode mode, Rng& rng,
                int baseline_in_channels = 1);

  const DetectorConfig& config() const { return cfg_; }
  DetectorMode mode() const { return mode_; }

  Backbone& w_tir() { return *w_tir_; }
  Backbone& w_rgb() { return *w_rgb_; }
  Conv2d& w_conv() { return *w_conv_; }
  RpnHead& rpn() { return rpn_; }
  RoiHead& roi_head() { return head_; }
  bool has_rgb_branch() const { return w_rgb_ != nullptr; }

  // Sets the fusion kernel to zero on the RGB block and identity on the
  // thermal block, plus N(0, rgb_noise) on the RGB block.
  void set_fusion_selection(double rgb_noise, Rng* rng = nullptr);

  ParamList params_tir() { return w_tir_->params("w_tir"); }
  ParamList params_rgb();
  ParamList params_conv();
  ParamList params_top();  // rpn + roi head
  ParamList all_params();

  // Stacks [rgb ; thermal] and applies the 1x1 conv.
  Tensor fuse(const Tensor& feat_rgb, const Tensor& feat_thermal);
  // d(fused) -> (d_rgb, d_thermal), accumulating fusion-conv grads.
  std::pair<Tensor, Tensor> fuse_backward(const Tensor& d_fused);

 private:
  DetectorConfig cfg_;
  DetectorMode mode_;
  std::unique_ptr<Backbone> w_tir_;
  std::unique_ptr<Backbone> w_rgb_;
  std::unique_ptr<Conv2d> w_conv_;
  RpnHead rpn_;
  RoiHead head_;
};

Tensor extract_features(Backbone& branch, const Tensor& image);

struct PipelineState {
  Tensor pseudo_rgb;          // multimodal only
  Tensor feat_thermal;
  Tensor feat_rgb;            // multimodal only
  Tensor feat;                // fused (or thermal in baseline)
  RpnOutput rpn_out;
  std::vector<Box> anchors;
  ImageSize image;
};

// Runs translate (multimodal) -> backbones -> fuse -> RPN.
PipelineState forward_pipeline(DetectorModel& model, Generator* t2r, const Tensor& thermal);

struct DetectConfig {
  double score_thresh = 0.05;
  double final_nms_thresh = 0.3;
  int max_dets = 50;
};

// Full inference path; image_id is copied into the emitted detections.
std::vector<Detection> detect(DetectorModel& model, Generator* t2r, const Tensor& thermal,
                              const std::string& image_id, const DatasetManifest& classes,
                              const DetectConfig& dcfg);

}  // namespace mmtod

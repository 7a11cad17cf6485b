#include "mmtod/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "mmtod/checkpoint.hpp"

using nlohmann::json;

namespace mmtod {

std::string DetectorConfig::to_json() const {
  json j;
  j["c_feat"] = c_feat;
  j["backbone_stride"] = backbone_stride;
  j["anchor_scales"] = anchor_scales;
  j["anchor_ratios"] = anchor_ratios;
  j["rpn_lambda"] = rpn.lambda;
  j["rpn_pos_iou"] = rpn.pos_iou;
  j["rpn_neg_iou"] = rpn.neg_iou;
  j["rpn_batch_anchors"] = rpn.batch_anchors;
  j["rpn_pos_fraction"] = rpn.pos_fraction;
  j["train_pre_nms"] = train_pre_nms;
  j["train_post_nms"] = train_post_nms;
  j["test_pre_nms"] = test_pre_nms;
  j["test_post_nms"] = test_post_nms;
  j["proposal_nms_thresh"] = proposal_nms_thresh;
  j["proposal_min_size"] = proposal_min_size;
  j["roi_pool_size"] = roi_pool_size;
  j["head_hidden"] = head_hidden;
  j["rois_per_image"] = rois_per_image;
  j["fg_fraction"] = fg_fraction;
  j["roi_fg_iou"] = roi_fg_iou;
  j["roi_bg_iou_hi"] = roi_bg_iou_hi;
  j["score_thresh"] = score_thresh;
  j["final_nms_thresh"] = final_nms_thresh;
  j["max_dets"] = max_dets;
  j["num_classes"] = num_classes;
  return j.dump();
}

DetectorConfig DetectorConfig::from_json(const std::string& s) {
  json j = json::parse(s);
  DetectorConfig c;
  c.c_feat = j.at("c_feat");
  c.backbone_stride = j.at("backbone_stride");
  c.anchor_scales = j.at("anchor_scales").get<std::vector<double>>();
  c.anchor_ratios = j.at("anchor_ratios").get<std::vector<double>>();
  c.rpn.lambda = j.at("rpn_lambda");
  c.rpn.pos_iou = j.at("rpn_pos_iou");
  c.rpn.neg_iou = j.at("rpn_neg_iou");
  c.rpn.batch_anchors = j.at("rpn_batch_anchors");
  c.rpn.pos_fraction = j.at("rpn_pos_fraction");
  c.train_pre_nms = j.at("train_pre_nms");
  c.train_post_nms = j.at("train_post_nms");
  c.test_pre_nms = j.at("test_pre_nms");
  c.test_post_nms = j.at("test_post_nms");
  c.proposal_nms_thresh = j.at("proposal_nms_thresh");
  c.proposal_min_size = j.at("proposal_min_size");
  c.roi_pool_size = j.at("roi_pool_size");
  c.head_hidden = j.at("head_hidden");
  c.rois_per_image = j.at("rois_per_image");
  c.fg_fraction = j.at("fg_fraction");
  c.roi_fg_iou = j.at("roi_fg_iou");
  c.roi_bg_iou_hi = j.at("roi_bg_iou_hi");
  c.score_thresh = j.at("score_thresh");
  c.final_nms_thresh = j.at("final_nms_thresh");
  c.max_dets = j.at("max_dets");
  c.num_classes = j.at("num_classes");
  return c;
}

uint64_t DetectorConfig::hash() const { return hash_string(to_json()); }

// ---- Backbone ----

Backbone::Backbone(int in_channels, int c_feat, Rng& rng) : in_c_(in_channels) {
  net_.add(std::make_unique<Conv2d>(in_channels, c_feat / 4, 3, 2, 1, rng));
  net_.add(std::make_unique<ReLU>());
  net_.add(std::make_unique<Conv2d>(c_feat / 4, c_feat / 2, 3, 2, 1, rng));
  net_.add(std::make_unique<ReLU>());
  net_.add(std::make_unique<Conv2d>(c_feat / 2, c_feat, 3, 2, 1, rng));
  net_.add(std::make_unique<ReLU>());
  net_.add(std::make_unique<Conv2d>(c_feat, c_feat, 3, 1, 1, rng));
  net_.add(std::make_unique<ReLU>());
}

Tensor Backbone::forward(const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != in_c_)
    throw std::invalid_argument("Backbone: expected " + std::to_string(in_c_) +
                                "-channel image, got " + std::to_string(image.dim(0)));
  return net_.forward(image);
}

Tensor Backbone::backward(const Tensor& dfeat) { return net_.backward(dfeat); }

ParamList Backbone::params(const std::string& prefix) {
  ParamList p;
  net_.collect_params(prefix, p);
  return p;
}

Tensor extract_features(Backbone& branch, const Tensor& image) {
  return branch.forward(image);
}

// ---- RPN head ----

RpnHead::RpnHead(int c_feat, int anchors_per_cell, Rng& rng)
    : a_(anchors_per_cell),
      conv_shared_(c_feat, c_feat, 3, 1, 1, rng),
      conv_logits_(c_feat, anchors_per_cell, 1, 1, 0, rng),
      conv_deltas_(c_feat, 4 * anchors_per_cell, 1, 1, 0, rng) {}

RpnOutput RpnHead::forward(const Tensor& feat) {
  Tensor shared = relu_.forward(conv_shared_.forward(feat));
  Tensor logits = conv_logits_.forward(shared);
  Tensor deltas = conv_deltas_.forward(shared);
  fh_ = feat.dim(1);
  fw_ = feat.dim(2);
  RpnOutput out;
  out.feat_h = fh_;
  out.feat_w = fw_;
  size_t n = static_cast<size_t>(fh_) * fw_ * a_;
  out.objectness.resize(n);
  out.deltas.resize(n);
  for (int i = 0; i < fh_; ++i)
    for (int j = 0; j < fw_; ++j)
      for (int a = 0; a < a_; ++a) {
        size_t idx = (static_cast<size_t>(i) * fw_ + j) * a_ + static_cast<size_t>(a);
        out.objectness[idx] = 1.0 / (1.0 + std::exp(-logits.at(a, i, j)));
        out.deltas[idx] = {deltas.at(4 * a, i, j), deltas.at(4 * a + 1, i, j),
                           deltas.at(4 * a + 2, i, j), deltas.at(4 * a + 3, i, j)};
      }
  probs_ = out.objectness;
  return out;
}

Tensor RpnHead::backward(const std::vector<double>& d_prob,
                         const std::vector<RegressionTarget>& d_deltas) {
  Tensor dlogits({a_, fh_, fw_});
  Tensor ddeltas({4 * a_, fh_, fw_});
  for (int i = 0; i < fh_; ++i)
    for (int j = 0; j < fw_; ++j)
      for (int a = 0; a < a_; ++a) {
        size_t idx = (static_cast<size_t>(i) * fw_ + j) * a_ + static_cast<size_t>(a);
        double p = probs_[idx];
        dlogits.at(a, i, j) = d_prob[idx] * p * (1.0 - p);
        ddeltas.at(4 * a, i, j) = d_deltas[idx].tx;
        ddeltas.at(4 * a + 1, i, j) = d_deltas[idx].ty;
        ddeltas.at(4 * a + 2, i, j) = d_deltas[idx].tw;
        ddeltas.at(4 * a + 3, i, j) = d_deltas[idx].th;
      }
  Tensor dshared = conv_logits_.backward(dlogits);
  dshared.add_scaled(conv_deltas_.backward(ddeltas), 1.0);
  return conv_shared_.backward(relu_.backward(dshared));
}

ParamList RpnHead::params(const std::string& prefix) {
  ParamList p;
  conv_shared_.collect_params(prefix + ".shared", p);
  conv_logits_.collect_params(prefix + ".logits", p);
  conv_deltas_.collect_params(prefix + ".deltas", p);
  return p;
}

// ---- RoI head ----

RoiHead::RoiHead(int c_feat, int pool_size, int hidden, int num_classes, Rng& rng)
    : k_(num_classes),
      fc1_(c_feat * pool_size * pool_size, hidden, rng),
      fc_cls_(hidden, num_classes + 1, rng),
      fc_reg_(hidden, 4 * (num_classes + 1), rng) {}

RoiHeadOutput RoiHead::forward(const Tensor& pooled) {
  Tensor h = relu_.forward(fc1_.forward(pooled));
  Tensor logits = fc_cls_.forward(h);
  Tensor reg = fc_reg_.forward(h);
  RoiHeadOutput out;
  int kc = k_ + 1;
  out.class_probs.resize(static_cast<size_t>(kc));
  double mx = logits[0];
  for (int c = 1; c < kc; ++c) mx = std::max(mx, logits[static_cast<size_t>(c)]);
  double sum = 0;
  for (int c = 0; c < kc; ++c) {
    out.class_probs[static_cast<size_t>(c)] = std::exp(logits[static_cast<size_t>(c)] - mx);
    sum += out.class_probs[static_cast<size_t>(c)];
  }
  for (auto& p : out.class_probs) p /= sum;
  probs_ = out.class_probs;
  out.deltas.resize(static_cast<size_t>(kc));
  for (int c = 0; c < kc; ++c)
    out.deltas[static_cast<size_t>(c)] = {reg[static_cast<size_t>(4 * c)],
                                          reg[static_cast<size_t>(4 * c + 1)],
                                          reg[static_cast<size_t>(4 * c + 2)],
                                          reg[static_cast<size_t>(4 * c + 3)]};
  return out;
}

Tensor RoiHead::backward(const std::vector<double>& d_prob,
                         const std::vector<RegressionTarget>& d_deltas) {
  int kc = k_ + 1;
  // softmax chain rule
  double dot = 0;
  for (int c = 0; c < kc; ++c) dot += d_prob[static_cast<size_t>(c)] * probs_[static_cast<size_t>(c)];
  Tensor dlogits({kc});
  for (int c = 0; c < kc; ++c)
    dlogits[static_cast<size_t>(c)] =
        probs_[static_cast<size_t>(c)] * (d_prob[static_cast<size_t>(c)] - dot);
  Tensor dreg({4 * kc});
  for (int c = 0; c < kc; ++c) {
    dreg[static_cast<size_t>(4 * c)] = d_deltas[static_cast<size_t>(c)].tx;
    dreg[static_cast<size_t>(4 * c + 1)] = d_deltas[static_cast<size_t>(c)].ty;
    dreg[static_cast<size_t>(4 * c + 2)] = d_deltas[static_cast<size_t>(c)].tw;
    dreg[static_cast<size_t>(4 * c + 3)] = d_deltas[static_cast<size_t>(c)].th;
  }
  Tensor dh = fc_cls_.backward(dlogits);
  dh.add_scaled(fc_reg_.backward(dreg), 1.0);
  return fc1_.backward(relu_.backward(dh));
}

ParamList RoiHead::params(const std::string& prefix) {
  ParamList p;
  fc1_.collect_params(prefix + ".fc1", p);
  fc_cls_.collect_params(prefix + ".cls", p);
  fc_reg_.collect_params(prefix + ".reg", p);
  return p;
}

// ---- RoI pooling ----

Tensor roi_pool(const Tensor& feat, const Box& roi, double stride, int pool_size,
                std::vector<int>* argmax, int* snap_counter) {
  int c_n = feat.dim(0), fh = feat.dim(1), fw = feat.dim(2);
  int x0 = std::clamp(static_cast<int>(std::floor(roi.x_min / stride)), 0, fw - 1);
  int y0 = std::clamp(static_cast<int>(std::floor(roi.y_min / stride)), 0, fh - 1);
  int x1 = std::clamp(static_cast<int>(std::ceil(roi.x_max / stride)), 0, fw);
  int y1 = std::clamp(static_cast<int>(std::ceil(roi.y_max / stride)), 0, fh);
  if (x1 <= x0 || y1 <= y0) {
    x1 = std::min(x0 + 1, fw);
    y1 = std::min(y0 + 1, fh);
    x0 = x1 - 1;
    y0 = y1 - 1;
    if (snap_counter) ++(*snap_counter);
  }
  int rw = x1 - x0, rh = y1 - y0;
  Tensor out({c_n, pool_size, pool_size});
  if (argmax) argmax->assign(static_cast<size_t>(c_n * pool_size * pool_size), -1);
  for (int c = 0; c < c_n; ++c)
    for (int py = 0; py < pool_size; ++py)
      for (int px = 0; px < pool_size; ++px) {
        int by0 = y0 + (py * rh) / pool_size;
        int by1 = y0 + ((py + 1) * rh + pool_size - 1) / pool_size;
        int bx0 = x0 + (px * rw) / pool_size;
        int bx1 = x0 + ((px + 1) * rw + pool_size - 1) / pool_size;
        by1 = std::max(by1, by0 + 1);
        bx1 = std::max(bx1, bx0 + 1);
        double best = -1e300;
        int best_idx = -1;
        for (int y = by0; y < by1 && y < fh; ++y)
          for (int x = bx0; x < bx1 && x < fw; ++x) {
            double v = feat.at(c, y, x);
            if (v > best) {
              best = v;
              best_idx = (c * fh + y) * fw + x;
            }
          }
        out.at(c, py, px) = best_idx >= 0 ? best : 0.0;
        if (argmax)
          (*argmax)[static_cast<size_t>((c * pool_size + py) * pool_size + px)] = best_idx;
      }
  return out;
}

void roi_pool_backward(const Tensor& d_pooled, const std::vector<int>& argmax,
                       Tensor& d_feat) {
  for (size_t i = 0; i < d_pooled.numel(); ++i)
    if (argmax[i] >= 0) d_feat[static_cast<size_t>(argmax[i])] += d_pooled[i];
}

// ---- proposals ----

std::vector<Proposal> propose_rois(const std::vector<double>& objectness,
                                   const std::vector<RegressionTarget>& deltas,
                                   const std::vector<Box>& anchors, const ProposalConfig& cfg,
                                   ImageSize image) {
  if (objectness.size() != deltas.size() || objectness.size() != anchors.size())
    throw std::invalid_argument("propose_rois: cardinality mismatch");
  std::vector<Proposal> cands;
  for (size_t i = 0; i < anchors.size(); ++i) {
    Box b = decode_box(anchors[i], deltas[i], image);
    if (b.width() < cfg.min_size || b.height() < cfg.min_size) continue;
    cands.push_back({b, objectness[i]});
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
  if (static_cast<int>(cands.size()) > cfg.pre_nms_top_n)
    cands.resize(static_cast<size_t>(cfg.pre_nms_top_n));
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const auto& c : cands) {
    boxes.push_back(c.box);
    scores.push_back(c.score);
  }
  std::vector<int> kept = nms(boxes, scores, cfg.nms_thresh);
  std::vector<Proposal> out;
  for (int k : kept) {
    out.push_back(cands[static_cast<size_t>(k)]);
    if (static_cast<int>(out.size()) >= cfg.post_nms_top_n) break;
  }
  return out;
}

// ---- model ----

DetectorModel::DetectorModel(const DetectorConfig& cfg, DetectorMode mode, Rng& rng,
                             int baseline_in_channels)
    : cfg_(cfg),
      mode_(mode),
      rpn_(cfg.c_feat, cfg.anchors_per_cell(), rng),
      head_(cfg.c_feat, cfg.roi_pool_size, cfg.head_hidden, cfg.num_classes, rng) {
  int tir_c = mode == DetectorMode::kMultimodal ? 1 : baseline_in_channels;
  w_tir_ = std::make_unique<Backbone>(tir_c, cfg.c_feat, rng);
  if (mode == DetectorMode::kMultimodal) {
    w_rgb_ = std::make_unique<Backbone>(3, cfg.c_feat, rng);
    w_conv_ = std::make_unique<Conv2d>(2 * cfg.c_feat, cfg.c_feat, 1, 1, 0, rng);
    set_fusion_selection(0.01, &rng);
  }
}

void DetectorModel::set_fusion_selection(double rgb_noise, Rng* rng) {
  if (!w_conv_) throw std::logic_error("set_fusion_selection: baseline model has no fusion");
  int c = cfg_.c_feat;
  Tensor& w = w_conv_->weight().value;  // [C, 2C]
  w.zero();
  w_conv_->bias().value.zero();
  for (int o = 0; o < c; ++o) {
    // input layout [rgb(0..C-1) ; thermal(C..2C-1)]
    w[static_cast<size_t>(o) * 2 * c + c + o] = 1.0;
    if (rgb_noise > 0 && rng)
      for (int i = 0; i < c; ++i)
        w[static_cast<size_t>(o) * 2 * c + i] = rng->normal(0.0, rgb_noise);
  }
}

ParamList DetectorModel::params_rgb() {
  return w_rgb_ ? w_rgb_->params("w_rgb") : ParamList{};
}

ParamList DetectorModel::params_conv() {
  ParamList p;
  if (w_conv_) w_conv_->collect_params("w_conv", p);
  return p;
}

ParamList DetectorModel::params_top() {
  ParamList p = rpn_.params("w_top.rpn");
  for (auto* q : head_.params("w_top.head")) p.push_back(q);
  return p;
}

ParamList DetectorModel::all_params() {
  ParamList p = params_tir();
  for (auto* q : params_rgb()) p.push_back(q);
  for (auto* q : params_conv()) p.push_back(q);
  for (auto* q : params_top()) p.push_back(q);
  return p;
}

static Tensor stack_channels(const Tensor& a, const Tensor& b) {
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2) || a.dim(0) != b.dim(0))
    throw std::invalid_argument("fuse: feature map shape mismatch");
  Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data(), a.data() + a.numel(), out.data());
  std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
  return out;
}

Tensor DetectorModel::fuse(const Tensor& feat_rgb, const Tensor& feat_thermal) {
  return w_conv_->forward(stack_channels(feat_rgb, feat_thermal));
}

std::pair<Tensor, Tensor> DetectorModel::fuse_backward(const Tensor& d_fused) {
  Tensor d_stacked = w_conv_->backward(d_fused);
  int c = cfg_.c_feat, h = d_stacked.dim(1), w = d_stacked.dim(2);
  Tensor d_rgb({c, h, w}), d_t({c, h, w});
  std::copy(d_stacked.data(), d_stacked.data() + d_rgb.numel(), d_rgb.data());
  std::copy(d_stacked.data() + d_rgb.numel(), d_stacked.data() + d_stacked.numel(),
            d_t.data());
  return {std::move(d_rgb), std::move(d_t)};
}

PipelineState forward_pipeline(DetectorModel& model, Generator* t2r, const Tensor& thermal) {
  PipelineState st;
  st.image = {thermal.dim(2), thermal.dim(1)};
  if (model.mode() == DetectorMode::kMultimodal) {
    if (!t2r) throw std::invalid_argument("multimodal pipeline requires a translator");
    st.pseudo_rgb = translate(*t2r, thermal);
    st.feat_rgb = model.w_rgb().forward(st.pseudo_rgb);
    st.feat_thermal = model.w_tir().forward(thermal);
    st.feat = model.fuse(st.feat_rgb, st.feat_thermal);
  } else {
    st.feat_thermal = model.w_tir().forward(thermal);
    st.feat = st.feat_thermal;
  }
  st.rpn_out = model.rpn().forward(st.feat);
  AnchorGrid grid;
  grid.stride = model.config().backbone_stride;
  grid.scales = model.config().anchor_scales;
  grid.aspect_ratios = model.config().anchor_ratios;
  grid.feat_h = st.rpn_out.feat_h;
  grid.feat_w = st.rpn_out.feat_w;
  st.anchors = generate_anchors(grid);
  return st;
}

std::vector<Detection> detect(DetectorModel& model, Generator* t2r, const Tensor& thermal,
                              const std::string& image_id, const DatasetManifest& classes,
                              const DetectConfig& dcfg) {
  const DetectorConfig& cfg = model.config();
  PipelineState st = forward_pipeline(model, t2r, thermal);
  ProposalConfig pc{cfg.test_pre_nms, cfg.test_post_nms, cfg.proposal_nms_thresh,
                    cfg.proposal_min_size};
  std::vector<Proposal> props =
      propose_rois(st.rpn_out.objectness, st.rpn_out.deltas, st.anchors, pc, st.image);

  struct Cand {
    int cls;
    double score;
    Box box;
  };
  std::vector<Cand> cands;
  for (const auto& p : props) {
    Tensor pooled = roi_pool(st.feat, p.box, cfg.backbone_stride, cfg.roi_pool_size, nullptr);
    RoiHeadOutput out = model.roi_head().forward(pooled);
    for (int c = 1; c <= cfg.num_classes; ++c) {
      double s = out.class_probs[static_cast<size_t>(c)];
      if (s < dcfg.score_thresh) continue;
      Box b = decode_box(p.box, out.deltas[static_cast<size_t>(c)], st.image);
      if (b.width() <= 0 || b.height() <= 0) continue;
      cands.push_back({c, s, b});
    }
  }
  // per-class NMS
  std::vector<Detection> dets;
  for (int c = 1; c <= cfg.num_classes; ++c) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    std::vector<size_t> src;
    for (size_t i = 0; i < cands.size(); ++i)
      if (cands[i].cls == c) {
        boxes.push_back(cands[i].box);
        scores.push_back(cands[i].score);
        src.push_back(i);
      }
    for (int k : nms(boxes, scores, dcfg.final_nms_thresh)) {
      Detection d;
      d.image_id = image_id;
      d.class_name = classes.classes.at(static_cast<size_t>(c - 1));
      d.score = scores[static_cast<size_t>(k)];
      d.box = boxes[static_cast<size_t>(k)];
      dets.push_back(std::move(d));
    }
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (static_cast<int>(dets.size()) > dcfg.max_dets)
    dets.resize(static_cast<size_t>(dcfg.max_dets));
  return dets;
}

}  // namespace mmtod

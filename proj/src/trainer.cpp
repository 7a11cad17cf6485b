#include "mmtod/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "mmtod/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mmtod {

std::string TrainerConfig::to_json() const {
  json j;
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["epochs"] = epochs;
  j["lr_decay_epoch"] = lr_decay_epoch;
  j["lr_decay_factor"] = lr_decay_factor;
  j["generator_lr_scale"] = generator_lr_scale;
  j["horizontal_flip"] = horizontal_flip;
  j["seed"] = seed;
  j["det"] = det.to_json();
  j["update_tir"] = update_tir;
  j["update_rgb"] = update_rgb;
  j["update_conv"] = update_conv;
  j["update_top"] = update_top;
  j["update_generator"] = update_generator;
  return j.dump();
}

TrainerConfig TrainerConfig::from_json(const std::string& s) {
  json j = json::parse(s);
  TrainerConfig c;
  c.lr = j.at("lr");
  c.momentum = j.at("momentum");
  c.epochs = j.at("epochs");
  c.lr_decay_epoch = j.at("lr_decay_epoch");
  c.lr_decay_factor = j.at("lr_decay_factor");
  c.generator_lr_scale = j.at("generator_lr_scale");
  c.horizontal_flip = j.at("horizontal_flip");
  c.seed = j.at("seed");
  c.det = DetectorConfig::from_json(j.at("det"));
  c.update_tir = j.at("update_tir");
  c.update_rgb = j.at("update_rgb");
  c.update_conv = j.at("update_conv");
  c.update_top = j.at("update_top");
  c.update_generator = j.at("update_generator");
  return c;
}

uint64_t TrainerConfig::hash() const { return hash_string(to_json()); }

// ---- plan / step ----

static ImageSample flip_horizontal(const ImageSample& s) {
  ImageSample out = s;
  int c_n = s.pixels.dim(0), h = s.pixels.dim(1), w = s.pixels.dim(2);
  for (int c = 0; c < c_n; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.pixels.at(c, y, x) = s.pixels.at(c, y, w - 1 - x);
  for (auto& a : out.annotations) {
    double x0 = a.box.x_min, x1 = a.box.x_max;
    a.box.x_min = w - x1;
    a.box.x_max = w - x0;
  }
  return out;
}

StepPlan make_step_plan(DetectorModel& model, Generator* t2r, const ImageSample& sample,
                        const std::vector<std::string>& classes, Rng& rng,
                        PipelineState* state_out) {
  const DetectorConfig& cfg = model.config();
  PipelineState st = forward_pipeline(model, t2r, sample.pixels);

  std::vector<Box> gt_boxes;
  std::vector<int> gt_labels;  // 1..K
  for (const auto& a : sample.annotations) {
    auto it = std::find(classes.begin(), classes.end(), a.class_name);
    if (it == classes.end())
      throw std::runtime_error("make_step_plan: class not in configured set: " + a.class_name);
    gt_boxes.push_back(a.box);
    gt_labels.push_back(static_cast<int>(it - classes.begin()) + 1);
  }

  StepPlan plan;
  plan.assign = assign_rpn_targets(st.anchors, gt_boxes, cfg.rpn, rng);
  plan.rpn_gt.assign(st.anchors.size(), RegressionTarget{});
  for (size_t i = 0; i < st.anchors.size(); ++i)
    if (plan.assign.labels[i] == AnchorLabel::kPositive)
      plan.rpn_gt[i] = encode_box(st.anchors[i],
                                  gt_boxes[static_cast<size_t>(*plan.assign.matched_gt[i])]);
  plan.n_reg = st.rpn_out.feat_h * st.rpn_out.feat_w;

  ProposalConfig pc{cfg.train_pre_nms, cfg.train_post_nms, cfg.proposal_nms_thresh,
                    cfg.proposal_min_size};
  std::vector<Proposal> props =
      propose_rois(st.rpn_out.objectness, st.rpn_out.deltas, st.anchors, pc, st.image);
  std::vector<Box> rois;
  for (const auto& p : props) rois.push_back(p.box);
  // ground-truth boxes join the candidate pool (stabilizes early head training)
  for (const auto& b : gt_boxes) rois.push_back(b);

  std::vector<int> fg, bg;
  std::vector<int> labels(rois.size(), 0);
  std::vector<RegressionTarget> targets(rois.size());
  for (size_t i = 0; i < rois.size(); ++i) {
    double best = 0;
    int best_g = -1;
    for (size_t g = 0; g < gt_boxes.size(); ++g) {
      double v = iou(rois[i], gt_boxes[g]);
      if (v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0 && best >= cfg.roi_fg_iou) {
      labels[i] = gt_labels[static_cast<size_t>(best_g)];
      targets[i] = encode_box(rois[i], gt_boxes[static_cast<size_t>(best_g)]);
      fg.push_back(static_cast<int>(i));
    } else if (best < cfg.roi_bg_iou_hi) {
      bg.push_back(static_cast<int>(i));
    }
  }
  int n_fg_keep = std::min(static_cast<int>(fg.size()),
                           static_cast<int>(std::round(cfg.fg_fraction * cfg.rois_per_image)));
  int n_bg_keep = std::min(static_cast<int>(bg.size()), cfg.rois_per_image - n_fg_keep);
  auto pick = [&](std::vector<int>& idx, int keep) {
    std::vector<int> perm = rng.permutation(static_cast<int>(idx.size()));
    std::vector<int> out;
    for (int k = 0; k < keep; ++k) out.push_back(idx[static_cast<size_t>(perm[static_cast<size_t>(k)])]);
    return out;
  };
  for (int i : pick(fg, n_fg_keep)) {
    plan.rois.push_back(rois[static_cast<size_t>(i)]);
    plan.roi_labels.push_back(labels[static_cast<size_t>(i)]);
    plan.roi_gt.push_back(targets[static_cast<size_t>(i)]);
  }
  for (int i : pick(bg, n_bg_keep)) {
    plan.rois.push_back(rois[static_cast<size_t>(i)]);
    plan.roi_labels.push_back(0);
    plan.roi_gt.push_back(RegressionTarget{});
  }
  if (state_out) *state_out = std::move(st);
  return plan;
}

StepLosses run_detection_step_with_state(DetectorModel& model, Generator* t2r,
                                         PipelineState& st, const StepPlan& plan,
                                         bool backward) {
  const DetectorConfig& cfg = model.config();
  StepLosses losses;

  RpnLossConfig rcfg = cfg.rpn;
  rcfg.n_cls = cfg.rpn.batch_anchors;
  rcfg.n_reg = plan.n_reg;
  std::vector<double> d_prob;
  std::vector<RegressionTarget> d_delta;
  double rpn_total = rpn_loss(st.rpn_out.objectness, st.rpn_out.deltas, plan.assign,
                              plan.rpn_gt, rcfg, backward ? &d_prob : nullptr,
                              backward ? &d_delta : nullptr);
  RpnLossConfig cls_only = rcfg;
  cls_only.lambda = 0;
  losses.rpn_cls = rpn_loss(st.rpn_out.objectness, st.rpn_out.deltas, plan.assign,
                            plan.rpn_gt, cls_only);
  losses.rpn_reg = rpn_total - losses.rpn_cls;

  size_t n_roi = plan.rois.size();
  std::vector<std::vector<double>> probs(n_roi);
  std::vector<std::vector<RegressionTarget>> deltas(n_roi);
  for (size_t i = 0; i < n_roi; ++i) {
    Tensor pooled =
        roi_pool(st.feat, plan.rois[i], cfg.backbone_stride, cfg.roi_pool_size, nullptr);
    RoiHeadOutput out = model.roi_head().forward(pooled);
    probs[i] = std::move(out.class_probs);
    deltas[i] = std::move(out.deltas);
  }
  std::vector<std::vector<double>> d_probs;
  std::vector<std::vector<RegressionTarget>> d_deltas;
  if (n_roi > 0) {
    double head_total =
        detection_head_loss(probs, deltas, plan.roi_labels, plan.roi_gt,
                            backward ? &d_probs : nullptr, backward ? &d_deltas : nullptr);
    double ce = 0;
    for (size_t i = 0; i < n_roi; ++i)
      ce += -std::log(std::clamp(probs[i][static_cast<size_t>(plan.roi_labels[i])],
                                 kProbEpsilon, 1.0 - kProbEpsilon));
    losses.head_cls = ce / static_cast<double>(n_roi);
    losses.head_reg = head_total - losses.head_cls;
  }

  if (backward) {
    Tensor d_feat(st.feat.shape());
    for (size_t i = 0; i < n_roi; ++i) {
      std::vector<int> argmax;
      Tensor pooled = roi_pool(st.feat, plan.rois[i], cfg.backbone_stride,
                               cfg.roi_pool_size, &argmax);
      model.roi_head().forward(pooled);  // refresh caches for this RoI
      Tensor d_pooled = model.roi_head().backward(d_probs[i], d_deltas[i]);
      roi_pool_backward(d_pooled, argmax, d_feat);
    }
    d_feat.add_scaled(model.rpn().backward(d_prob, d_delta), 1.0);
    if (model.mode() == DetectorMode::kMultimodal) {
      auto [d_rgb, d_t] = model.fuse_backward(d_feat);
      model.w_tir().backward(d_t);
      Tensor d_pseudo = model.w_rgb().backward(d_rgb);
      if (t2r) t2r->backward(d_pseudo);
    } else {
      model.w_tir().backward(d_feat);
    }
  }
  return losses;
}

StepLosses run_detection_step(DetectorModel& model, Generator* t2r,
                              const Tensor& thermal_image, const StepPlan& plan,
                              bool backward) {
  PipelineState st = forward_pipeline(model, t2r, thermal_image);
  return run_detection_step_with_state(model, t2r, st, plan, backward);
}

// ---- runs ----

static ParamList trainable_detector_params(TrainRun& run) {
  DetectorModel& m = *run.model;
  if (m.mode() == DetectorMode::kThermalOnlyBaseline) return m.all_params();
  ParamList p;
  const TrainerConfig& c = run.cfg;
  if (c.update_tir)
    for (auto* q : m.params_tir()) p.push_back(q);
  if (c.update_rgb)
    for (auto* q : m.params_rgb()) p.push_back(q);
  if (c.update_conv)
    for (auto* q : m.params_conv()) p.push_back(q);
  if (c.update_top)
    for (auto* q : m.params_top()) p.push_back(q);
  return p;
}

TrainRun make_pretrain_run(const TrainerConfig& cfg, BranchKind branch) {
  TrainRun run;
  run.cfg = cfg;
  Rng init_rng(cfg.seed ^ 0x1234abcdull);
  run.model = std::make_unique<DetectorModel>(cfg.det, DetectorMode::kThermalOnlyBaseline,
                                              init_rng, branch == BranchKind::kRgb ? 3 : 1);
  run.opt_det = SgdMomentum(cfg.lr, cfg.momentum);
  run.opt_gen = SgdMomentum(cfg.lr * cfg.generator_lr_scale, cfg.momentum);
  run.rng = Rng(cfg.seed);
  return run;
}

TrainRun make_mmtod_run(const TrainerConfig& cfg, const std::string& thermal_ck,
                        const std::string& rgb_ck, const std::string& translator_ck) {
  TrainRun run;
  run.cfg = cfg;
  Rng init_rng(cfg.seed ^ 0x9876fedcull);
  run.model =
      std::make_unique<DetectorModel>(cfg.det, DetectorMode::kMultimodal, init_rng);

  Checkpoint ck_t = load_checkpoint_file(thermal_ck, "detector");
  unpack_params(ck_t, "params", run.model->params_tir());
  unpack_params(ck_t, "params", run.model->params_top());
  Checkpoint ck_r = load_checkpoint_file(rgb_ck, "detector");
  // the RGB pre-training run stores its single branch under the w_tir slot
  unpack_params(ck_r, "params", run.model->w_rgb().params("w_tir"));
  run.model->all_params();  // restore canonical param names

  run.translator = std::make_unique<TranslatorPair>(
      load_translator(translator_ck, &run.translator_cfg));
  run.has_translator = true;

  run.opt_det = SgdMomentum(cfg.lr, cfg.momentum);
  run.opt_gen = SgdMomentum(cfg.lr * cfg.generator_lr_scale, cfg.momentum);
  run.rng = Rng(cfg.seed);
  return run;
}

std::vector<ImageSample> load_all_samples(const DatasetManifest& manifest) {
  std::vector<ImageSample> samples;
  samples.reserve(manifest.images.size());
  for (size_t i = 0; i < manifest.images.size(); ++i) samples.push_back(load_sample(manifest, i));
  return samples;
}

void run_training(TrainRun& run, const DatasetManifest& dataset, const std::string& out_dir) {
  if (dataset.images.empty()) throw std::invalid_argument("run_training: empty dataset");
  if (!params_all_finite(run.model->all_params()))
    throw std::runtime_error("run_training: non-finite parameters at start");
  std::vector<ImageSample> samples = load_all_samples(dataset);
  const TrainerConfig& cfg = run.cfg;

  std::ofstream csv;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::string csv_path = (fs::path(out_dir) / "train_losses.csv").string();
    bool fresh = !fs::exists(csv_path) || run.completed_epochs == 0;
    csv.open(csv_path, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) csv << "iteration,rpn_cls,rpn_reg,head_cls,head_reg,total\n";
  }

  Generator* gen = run.has_translator ? run.translator->g_t2r.get() : nullptr;
  ParamList det_params = trainable_detector_params(run);
  ParamList gen_params = gen ? gen->params("g_t2r") : ParamList{};
  bool step_gen = gen && cfg.update_generator;

  size_t iteration = run.history.size();
  for (int epoch = run.completed_epochs; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr;
    if (cfg.lr_decay_epoch >= 0 && epoch >= cfg.lr_decay_epoch) lr *= cfg.lr_decay_factor;
    run.opt_det.set_lr(lr);
    run.opt_gen.set_lr(lr * cfg.generator_lr_scale);

    std::vector<int> order = run.rng.permutation(static_cast<int>(samples.size()));
    for (int idx : order) {
      ImageSample sample = samples[static_cast<size_t>(idx)];
      if (cfg.horizontal_flip && run.rng.uniform() < 0.5) sample = flip_horizontal(sample);

      PipelineState st;
      StepPlan plan = make_step_plan(*run.model, gen, sample, dataset.classes, run.rng, &st);
      zero_grads(det_params);
      if (step_gen) zero_grads(gen_params);
      StepLosses losses = run_detection_step_with_state(*run.model, gen, st, plan, true);
      if (!std::isfinite(losses.total()))
        throw std::runtime_error(
            "run_training: non-finite loss at iteration " + std::to_string(iteration) +
            "; last-good checkpoint retained" + (out_dir.empty() ? "" : " in " + out_dir));
      run.opt_det.step(det_params);
      if (step_gen) run.opt_gen.step(gen_params);

      run.history.push_back(losses);
      if (csv.is_open())
        csv << iteration << "," << losses.rpn_cls << "," << losses.rpn_reg << ","
            << losses.head_cls << "," << losses.head_reg << "," << losses.total()
            << std::endl;
      ++iteration;
    }
    run.completed_epochs = epoch + 1;
    if (!out_dir.empty()) {
      csv.flush();
      save_trainrun(run, (fs::path(out_dir) / "run_last.ck").string());
    }
  }
}

// ---- checkpoints ----

static json history_to_json(const std::vector<StepLosses>& h) {
  json arr = json::array();
  for (const auto& l : h) arr.push_back({l.rpn_cls, l.rpn_reg, l.head_cls, l.head_reg});
  return arr;
}

static std::vector<StepLosses> history_from_json(const json& arr) {
  std::vector<StepLosses> h;
  for (const auto& e : arr)
    h.push_back({e[0].get<double>(), e[1].get<double>(), e[2].get<double>(),
                 e[3].get<double>()});
  return h;
}

void save_trainrun(TrainRun& run, const std::string& path) {
  Checkpoint ck;
  ck.kind = "trainrun";
  ck.config_hash = run.cfg.hash();
  ck.meta["config"] = run.cfg.to_json();
  ck.meta["mode"] =
      run.model->mode() == DetectorMode::kMultimodal ? "multimodal" : "baseline";
  ck.meta["in_channels"] = run.model->w_tir().in_channels();
  ck.meta["completed_epochs"] = run.completed_epochs;
  ck.meta["rng"] = run.rng.serialize_state();
  ck.meta["history"] = history_to_json(run.history);
  ck.meta["has_translator"] = run.has_translator;
  pack_params(ck, "params", run.model->all_params());
  pack_state(ck, "opt_det", run.opt_det.state());
  if (run.has_translator) {
    ck.meta["translator_config"] = run.translator_cfg.to_json();
    pack_params(ck, "t2r", run.translator->g_t2r->params("g_t2r"));
    pack_params(ck, "r2t", run.translator->g_r2t->params("g_r2t"));
    pack_params(ck, "d_rgb", run.translator->d_rgb->params("d_rgb"));
    pack_params(ck, "d_thermal", run.translator->d_thermal->params("d_thermal"));
    pack_state(ck, "opt_gen", run.opt_gen.state());
  }
  save_checkpoint_file(ck, path);
}

TrainRun load_trainrun(const std::string& path) {
  Checkpoint ck = load_checkpoint_file(path, "trainrun");
  TrainRun run;
  run.cfg = TrainerConfig::from_json(ck.meta.at("config"));
  if (ck.config_hash != run.cfg.hash())
    throw std::runtime_error("load_trainrun: config hash mismatch in " + path);
  bool multimodal = ck.meta.at("mode") == "multimodal";
  int in_c = ck.meta.at("in_channels");
  Rng tmp(0);
  run.model = std::make_unique<DetectorModel>(
      run.cfg.det, multimodal ? DetectorMode::kMultimodal : DetectorMode::kThermalOnlyBaseline,
      tmp, in_c);
  unpack_params(ck, "params", run.model->all_params());
  run.opt_det = SgdMomentum(run.cfg.lr, run.cfg.momentum);
  unpack_state(ck, "opt_det", run.opt_det.state());
  run.opt_gen = SgdMomentum(run.cfg.lr * run.cfg.generator_lr_scale, run.cfg.momentum);
  run.has_translator = ck.meta.at("has_translator");
  if (run.has_translator) {
    run.translator_cfg = TranslatorTrainConfig::from_json(ck.meta.at("translator_config"));
    run.translator =
        std::make_unique<TranslatorPair>(make_translator(run.translator_cfg, tmp));
    unpack_params(ck, "t2r", run.translator->g_t2r->params("g_t2r"));
    unpack_params(ck, "r2t", run.translator->g_r2t->params("g_r2t"));
    unpack_params(ck, "d_rgb", run.translator->d_rgb->params("d_rgb"));
    unpack_params(ck, "d_thermal", run.translator->d_thermal->params("d_thermal"));
    unpack_state(ck, "opt_gen", run.opt_gen.state());
  }
  run.completed_epochs = ck.meta.at("completed_epochs");
  run.rng.restore_state(ck.meta.at("rng"));
  run.history = history_from_json(ck.meta.at("history"));
  return run;
}

void save_detector(DetectorModel& model, Generator* t2r,
                   const TranslatorTrainConfig* t2r_cfg, const TrainerConfig& cfg,
                   const std::string& path) {
  Checkpoint ck;
  ck.kind = "detector";
  ck.config_hash = cfg.hash();
  ck.meta["config"] = cfg.to_json();
  ck.meta["mode"] = model.mode() == DetectorMode::kMultimodal ? "multimodal" : "baseline";
  ck.meta["in_channels"] = model.w_tir().in_channels();
  ck.meta["has_t2r"] = t2r != nullptr;
  pack_params(ck, "params", model.all_params());
  if (t2r) {
    if (!t2r_cfg) throw std::invalid_argument("save_detector: t2r without its config");
    ck.meta["t2r_config"] = t2r_cfg->to_json();
    pack_params(ck, "t2r", t2r->params("g_t2r"));
  }
  save_checkpoint_file(ck, path);
}

DetectorBundle load_detector(const std::string& path) {
  Checkpoint ck = load_checkpoint_file(path, "detector");
  DetectorBundle b;
  b.cfg = TrainerConfig::from_json(ck.meta.at("config"));
  bool multimodal = ck.meta.at("mode") == "multimodal";
  int in_c = ck.meta.at("in_channels");
  Rng tmp(0);
  b.model = std::make_unique<DetectorModel>(
      b.cfg.det, multimodal ? DetectorMode::kMultimodal : DetectorMode::kThermalOnlyBaseline,
      tmp, in_c);
  unpack_params(ck, "params", b.model->all_params());
  if (ck.meta.value("has_t2r", false)) {
    b.t2r_cfg = TranslatorTrainConfig::from_json(ck.meta.at("t2r_config"));
    b.t2r = std::make_unique<Generator>(1, 3, b.t2r_cfg.base_channels,
                                        b.t2r_cfg.n_res_blocks, tmp);
    unpack_params(ck, "t2r", b.t2r->params("g_t2r"));
  }
  return b;
}

std::vector<Detection> detect_all(DetectorModel& model, Generator* t2r,
                                  const std::vector<ImageSample>& samples,
                                  const DatasetManifest& manifest, const DetectConfig& dcfg,
                                  double* mean_latency_sec) {
  std::vector<Detection> all;
  double total_sec = 0;
  for (const auto& s : samples) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<Detection> dets = detect(model, t2r, s.pixels, s.id, manifest, dcfg);
    total_sec += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (auto& d : dets) all.push_back(std::move(d));
  }
  if (mean_latency_sec)
    *mean_latency_sec = samples.empty() ? 0.0 : total_sec / static_cast<double>(samples.size());
  return all;
}

}  // namespace mmtod

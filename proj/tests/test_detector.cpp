#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmtod/detector.hpp"
#include "mmtod/rng.hpp"

using namespace mmtod;

namespace {

Tensor random_image(int c, int h, int w, Rng& rng) {
  Tensor t({c, h, w});
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}

DetectorConfig small_cfg() {
  DetectorConfig cfg;
  cfg.c_feat = 8;
  cfg.head_hidden = 16;
  return cfg;
}

}  // namespace

TEST_CASE("backbone shape contract 64x64 -> C x 8 x 8") {
  Rng rng(121);
  Backbone bb(1, 8, rng);
  Tensor feat = extract_features(bb, random_image(1, 64, 64, rng));
  CHECK(feat.shape() == std::vector<int>{8, 8, 8});
  Backbone bb3(3, 8, rng);
  Tensor feat3 = extract_features(bb3, random_image(3, 64, 64, rng));
  CHECK(feat3.shape() == std::vector<int>{8, 8, 8});
  CHECK_THROWS(extract_features(bb, random_image(3, 64, 64, rng)));
}

TEST_CASE("receptive field: far-away pixel changes leave features unchanged") {
  Rng rng(122);
  Backbone bb(1, 8, rng);
  Tensor a = random_image(1, 64, 64, rng);
  Tensor b = a;
  b.at(0, 63, 63) += 0.5;  // bottom-right corner
  Tensor fa = extract_features(bb, a);
  Tensor fb = extract_features(bb, b);
  // cell (0,0) covers pixels far outside the corner's receptive influence:
  // 4 convs of 3x3 (strides 2,2,2,1) reach at most ~30 input pixels
  for (int c = 0; c < 8; ++c) CHECK(fa.at(c, 0, 0) == fb.at(c, 0, 0));
  // while some cell does change
  bool any_diff = false;
  for (size_t i = 0; i < fa.numel(); ++i)
    if (fa[i] != fb[i]) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("rpn output cardinality and probability range") {
  Rng rng(123);
  DetectorConfig cfg = small_cfg();
  RpnHead rpn(cfg.c_feat, cfg.anchors_per_cell(), rng);
  Tensor feat = random_image(cfg.c_feat, 8, 8, rng);
  RpnOutput out = rpn.forward(feat);
  CHECK(out.objectness.size() == 8 * 8 * 9);
  CHECK(out.deltas.size() == out.objectness.size());
  for (double p : out.objectness) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("roi_pool hand cases") {
  Tensor feat({2, 4, 4});
  Rng rng(124);
  for (size_t i = 0; i < feat.numel(); ++i) feat[i] = rng.uniform(-1, 1);

  // whole map, P = 1 -> per-channel global max (stride 1 for direct coords)
  std::vector<int> argmax;
  Tensor g = roi_pool(feat, {0, 0, 4, 4}, 1.0, 1, &argmax);
  for (int c = 0; c < 2; ++c) {
    double mx = -1e9;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) mx = std::max(mx, feat.at(c, i, j));
    CHECK(g.at(c, 0, 0) == mx);
  }

  // single cell, P = 1 -> that cell's values
  Tensor one = roi_pool(feat, {1, 2, 2, 3}, 1.0, 1, nullptr);
  for (int c = 0; c < 2; ++c) CHECK(one.at(c, 0, 0) == feat.at(c, 2, 1));

  // zero-area roi snaps to one cell and bumps the counter
  int snaps = 0;
  Tensor z = roi_pool(feat, {2, 2, 2, 2}, 1.0, 2, nullptr, &snaps);
  CHECK(snaps > 0);
  CHECK(z.shape() == std::vector<int>{2, 2, 2});
}

TEST_CASE("roi_pool monotonicity") {
  Rng rng(125);
  Tensor feat({1, 6, 6});
  for (size_t i = 0; i < feat.numel(); ++i) feat[i] = rng.uniform();
  Box roi{0, 0, 6, 6};
  Tensor base = roi_pool(feat, roi, 1.0, 3, nullptr);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor bumped = feat;
    bumped[static_cast<size_t>(rng.uniform_int(0, 35))] += rng.uniform(0, 1);
    Tensor out = roi_pool(bumped, roi, 1.0, 3, nullptr);
    for (size_t i = 0; i < out.numel(); ++i) CHECK(out[i] >= base[i]);
  }
}

TEST_CASE("roi_pool backward routes gradient to argmax cells") {
  Rng rng(126);
  Tensor feat({2, 8, 8});
  for (size_t i = 0; i < feat.numel(); ++i) feat[i] = rng.uniform(-1, 1);
  Box roi{4, 8, 28, 30};  // image coords, stride 4 -> cells [1,7]x[2,7.5]
  std::vector<int> argmax;
  Tensor pooled = roi_pool(feat, roi, 4.0, 2, &argmax);

  Tensor dp(pooled.shape());
  for (size_t i = 0; i < dp.numel(); ++i) dp[i] = rng.uniform(-1, 1);
  Tensor dfeat(feat.shape());
  roi_pool_backward(dp, argmax, dfeat);

  // finite-difference check through the pooling
  double h = 1e-6;
  for (size_t i = 0; i < feat.numel(); i += 7) {
    Tensor fp = feat, fm = feat;
    fp[i] += h;
    fm[i] -= h;
    Tensor pp = roi_pool(fp, roi, 4.0, 2, nullptr);
    Tensor pm = roi_pool(fm, roi, 4.0, 2, nullptr);
    double fd = 0;
    for (size_t k = 0; k < pp.numel(); ++k) fd += dp[k] * (pp[k] - pm[k]);
    fd /= 2 * h;
    CHECK(dfeat[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("propose_rois equals step-by-step composition of geometry ops") {
  Rng rng(127);
  DetectorConfig cfg = small_cfg();
  AnchorGrid grid;
  grid.stride = cfg.backbone_stride;
  grid.scales = cfg.anchor_scales;
  grid.aspect_ratios = cfg.anchor_ratios;
  grid.feat_h = grid.feat_w = 4;
  std::vector<Box> anchors = generate_anchors(grid);
  ImageSize img{32, 32};

  std::vector<double> obj;
  std::vector<RegressionTarget> deltas;
  for (size_t i = 0; i < anchors.size(); ++i) {
    obj.push_back(rng.uniform(0.01, 0.99));
    deltas.push_back({rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                      rng.uniform(-0.3, 0.3)});
  }
  ProposalConfig pc{20, 6, 0.7, 2.0};
  std::vector<Proposal> got = propose_rois(obj, deltas, anchors, pc, img);

  // reference composition
  struct Cand {
    Box box;
    double score;
    int idx;
  };
  std::vector<Cand> cands;
  for (size_t i = 0; i < anchors.size(); ++i) {
    Box b = decode_box(anchors[i], deltas[i], img);
    if (b.width() >= pc.min_size && b.height() >= pc.min_size)
      cands.push_back({b, obj[i], static_cast<int>(i)});
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Cand& a, const Cand& b) { return a.score > b.score; });
  if (static_cast<int>(cands.size()) > pc.pre_nms_top_n) cands.resize(static_cast<size_t>(pc.pre_nms_top_n));
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const auto& c : cands) {
    boxes.push_back(c.box);
    scores.push_back(c.score);
  }
  std::vector<int> kept = nms(boxes, scores, pc.nms_thresh);
  if (static_cast<int>(kept.size()) > pc.post_nms_top_n) kept.resize(static_cast<size_t>(pc.post_nms_top_n));

  REQUIRE(got.size() == kept.size());
  for (size_t k = 0; k < kept.size(); ++k) {
    const Box& want = boxes[static_cast<size_t>(kept[k])];
    CHECK(got[k].box.x_min == doctest::Approx(want.x_min).epsilon(1e-12));
    CHECK(got[k].box.y_max == doctest::Approx(want.y_max).epsilon(1e-12));
    CHECK(got[k].score == doctest::Approx(scores[static_cast<size_t>(kept[k])]).epsilon(1e-12));
  }
}

TEST_CASE("fuse selection kernels") {
  Rng rng(128);
  DetectorConfig cfg = small_cfg();
  DetectorModel model(cfg, DetectorMode::kMultimodal, rng);
  int c = cfg.c_feat;
  Tensor fr = random_image(c, 4, 4, rng), ft = random_image(c, 4, 4, rng);

  // [0 | I]: thermal selection (exact)
  model.set_fusion_selection(0.0);
  Tensor sel_t = model.fuse(fr, ft);
  for (size_t i = 0; i < sel_t.numel(); ++i) CHECK(sel_t[i] == ft[i]);

  // [I | 0]: rgb selection — set manually
  Param& w = model.w_conv().weight();
  Param& b = model.w_conv().bias();
  w.value.zero();
  b.value.zero();
  for (int o = 0; o < c; ++o) w.value[static_cast<size_t>(o * 2 * c + o)] = 1.0;
  Tensor sel_r = model.fuse(fr, ft);
  for (size_t i = 0; i < sel_r.numel(); ++i) CHECK(sel_r[i] == fr[i]);

  // [I/2 | I/2]: elementwise mean
  w.value.zero();
  for (int o = 0; o < c; ++o) {
    w.value[static_cast<size_t>(o * 2 * c + o)] = 0.5;
    w.value[static_cast<size_t>(o * 2 * c + c + o)] = 0.5;
  }
  Tensor mean = model.fuse(fr, ft);
  for (size_t i = 0; i < mean.numel(); ++i)
    CHECK(mean[i] == doctest::Approx(0.5 * (fr[i] + ft[i])).epsilon(1e-12));
}

TEST_CASE("baseline pipeline and anchor grid consistency") {
  Rng rng(129);
  DetectorConfig cfg = small_cfg();
  DetectorModel model(cfg, DetectorMode::kThermalOnlyBaseline, rng);
  Tensor img = random_image(1, 64, 64, rng);
  PipelineState st = forward_pipeline(model, nullptr, img);
  CHECK(st.feat.shape() == std::vector<int>{cfg.c_feat, 8, 8});
  CHECK(st.anchors.size() == st.rpn_out.objectness.size());
  CHECK(st.anchors.size() == 8 * 8 * 9);
  CHECK(st.image.width == 64);
}

TEST_CASE("detect basics: determinism, bounds, thresholds, caps") {
  Rng rng(130);
  DetectorConfig cfg = small_cfg();
  DetectorModel model(cfg, DetectorMode::kThermalOnlyBaseline, rng);
  DatasetManifest manifest;  // default classes
  Tensor img = random_image(1, 64, 64, rng);

  DetectConfig dc;
  dc.score_thresh = 0.0;
  auto d1 = detect(model, nullptr, img, "img0", manifest, dc);
  auto d2 = detect(model, nullptr, img, "img0", manifest, dc);
  REQUIRE(d1.size() == d2.size());
  for (size_t i = 0; i < d1.size(); ++i) {
    CHECK(d1[i].score == d2[i].score);
    CHECK(d1[i].box.x_min >= 0);
    CHECK(d1[i].box.y_min >= 0);
    CHECK(d1[i].box.x_max <= 64);
    CHECK(d1[i].box.y_max <= 64);
    CHECK(d1[i].image_id == "img0");
  }
  // descending score order
  for (size_t i = 1; i < d1.size(); ++i) CHECK(d1[i].score <= d1[i - 1].score);

  DetectConfig strict = dc;
  strict.score_thresh = 1.0;
  CHECK(detect(model, nullptr, img, "img0", manifest, strict).empty());

  DetectConfig capped = dc;
  capped.max_dets = 1;
  auto dcap = detect(model, nullptr, img, "img0", manifest, capped);
  CHECK(dcap.size() <= 1);
  if (!dcap.empty() && !d1.empty()) CHECK(dcap[0].score == d1[0].score);
}

TEST_CASE("fusion-identity: selection-kernel multimodal equals baseline detections") {
  Rng rng(131);
  DetectorConfig cfg = small_cfg();
  DetectorModel baseline(cfg, DetectorMode::kThermalOnlyBaseline, rng);
  Rng rng2(132);
  DetectorModel mm(cfg, DetectorMode::kMultimodal, rng2);

  // copy thermal branch + top from baseline into the multimodal model
  {
    auto src = snapshot_values(baseline.params_tir());
    restore_values(mm.params_tir(), src);
    auto top = snapshot_values(baseline.params_top());
    restore_values(mm.params_top(), top);
  }
  mm.set_fusion_selection(0.0);  // exact [0 | I]

  TranslatorTrainConfig tcfg;
  tcfg.base_channels = 4;
  tcfg.n_res_blocks = 1;
  Rng rng3(133);
  Generator t2r(1, 3, tcfg.base_channels, tcfg.n_res_blocks, rng3);

  DatasetManifest manifest;
  DetectConfig dc;
  dc.score_thresh = 0.01;
  for (int trial = 0; trial < 5; ++trial) {
    Tensor img = random_image(1, 64, 64, rng);
    auto db = detect(baseline, nullptr, img, "x", manifest, dc);
    auto dm = detect(mm, &t2r, img, "x", manifest, dc);
    REQUIRE(db.size() == dm.size());
    for (size_t i = 0; i < db.size(); ++i) {
      CHECK(db[i].class_name == dm[i].class_name);
      CHECK(std::abs(db[i].score - dm[i].score) < 1e-5);
      CHECK(std::abs(db[i].box.x_min - dm[i].box.x_min) < 1e-5);
      CHECK(std::abs(db[i].box.y_max - dm[i].box.y_max) < 1e-5);
    }
  }
}

TEST_CASE("detector config json round-trip") {
  DetectorConfig cfg = small_cfg();
  cfg.num_classes = 5;
  cfg.anchor_scales = {1, 3};
  DetectorConfig back = DetectorConfig::from_json(cfg.to_json());
  CHECK(back.c_feat == cfg.c_feat);
  CHECK(back.num_classes == 5);
  CHECK(back.anchor_scales == cfg.anchor_scales);
  CHECK(back.hash() == cfg.hash());
  back.score_thresh = 0.5;
  CHECK(back.hash() != cfg.hash());
}

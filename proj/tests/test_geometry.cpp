#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmtod/geometry.hpp"
#include "mmtod/rng.hpp"

using namespace mmtod;

namespace {

Box random_box(Rng& rng, double extent = 100.0) {
  double x0 = rng.uniform(0, extent), y0 = rng.uniform(0, extent);
  double w = rng.uniform(0.5, extent * 0.5), h = rng.uniform(0.5, extent * 0.5);
  return {x0, y0, x0 + w, y0 + h};
}

double naive_iou(const Box& a, const Box& b) {
  double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

// Literal transcription of the greedy definition, O(n^2) with explicit
// "alive" bookkeeping, tie-break by lower index.
std::vector<int> naive_nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                           double thresh) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<int> kept;
  for (;;) {
    int best = -1;
    for (size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && (best < 0 || scores[i] > scores[static_cast<size_t>(best)]))
        best = static_cast<int>(i);
    if (best < 0) break;
    kept.push_back(best);
    alive[static_cast<size_t>(best)] = false;
    for (size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && naive_iou(boxes[static_cast<size_t>(best)], boxes[i]) > thresh)
        alive[i] = false;
  }
  return kept;
}

}  // namespace

TEST_CASE("iou hand cases") {
  Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(iou({0, 0, 1, 1}, {5, 5, 6, 6}) == 0.0);
  CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  // degenerate zero-area boxes
  CHECK(iou({3, 3, 3, 3}, {3, 3, 3, 3}) == 0.0);
}

TEST_CASE("iou randomized properties") {
  Rng rng(101);
  for (int i = 0; i < 1000; ++i) {
    Box a = random_box(rng), b = random_box(rng);
    double ab = iou(a, b);
    CHECK(ab == doctest::Approx(iou(b, a)).epsilon(1e-15));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(std::abs(ab - naive_iou(a, b)) < 1e-9);
    CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("nms hand cases") {
  CHECK(nms({}, {}, 0.5).empty());
  CHECK(nms({{0, 0, 10, 10}}, {0.9}, 0.5) == std::vector<int>{0});
  CHECK(nms({{0, 0, 10, 10}, {0, 0, 10, 10}}, {0.9, 0.8}, 0.5) == std::vector<int>{0});
  // IoU(A,B) = 81/119 suppresses B; C far away survives
  std::vector<Box> boxes{{0, 0, 10, 10}, {1, 1, 11, 11}, {20, 20, 30, 30}};
  CHECK(nms(boxes, {0.9, 0.8, 0.7}, 0.5) == std::vector<int>{0, 2});
}

TEST_CASE("nms tie-break by lower input index") {
  std::vector<Box> boxes{{0, 0, 10, 10}, {0, 0, 10, 10}, {0, 0, 10, 10}};
  CHECK(nms(boxes, {0.5, 0.5, 0.5}, 0.9) == std::vector<int>{0});
  CHECK(nms(boxes, {0.5, 0.5, 0.5}, 1.0) == std::vector<int>{0, 1, 2});
}

TEST_CASE("nms equals naive reference on random instances") {
  Rng rng(202);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = rng.uniform_int(0, 50);
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      boxes.push_back(random_box(rng, 40));
      scores.push_back(rng.uniform());
    }
    double thresh = rng.uniform(0.1, 0.9);
    CHECK(nms(boxes, scores, thresh) == naive_nms(boxes, scores, thresh));
  }
}

TEST_CASE("nms order-independent for distinct scores") {
  Rng rng(303);
  for (int trial = 0; trial < 100; ++trial) {
    int n = rng.uniform_int(1, 20);
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      boxes.push_back(random_box(rng, 30));
      scores.push_back((i + 1) * 0.013 + rng.uniform() * 0.005);  // distinct
    }
    std::vector<int> perm = rng.permutation(n);
    std::vector<Box> boxes2(boxes.size());
    std::vector<double> scores2(scores.size());
    for (int i = 0; i < n; ++i) {
      boxes2[static_cast<size_t>(i)] = boxes[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      scores2[static_cast<size_t>(i)] = scores[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    auto kept1 = nms(boxes, scores, 0.5);
    auto kept2 = nms(boxes2, scores2, 0.5);
    REQUIRE(kept1.size() == kept2.size());
    for (size_t k = 0; k < kept1.size(); ++k) {
      // map kept2's indices back through the permutation
      CHECK(perm[static_cast<size_t>(kept2[k])] == kept1[k]);
    }
  }
}

TEST_CASE("encode/decode hand cases") {
  Box anchor{0, 0, 10, 10};
  RegressionTarget t0 = encode_box(anchor, anchor);
  CHECK(t0.tx == 0.0);
  CHECK(t0.ty == 0.0);
  CHECK(t0.tw == 0.0);
  CHECK(t0.th == 0.0);

  RegressionTarget t1 = encode_box(anchor, {5, 0, 15, 10});
  CHECK(t1.tx == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t1.ty == 0.0);
  CHECK(t1.tw == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(t1.th == doctest::Approx(0.0).epsilon(1e-12));

  Box d = decode_box(anchor, {0.5, 0, 0, 0});
  CHECK(d.x_min == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(d.x_max == doctest::Approx(15.0).epsilon(1e-12));

  Box same = decode_box(anchor, {0, 0, 0, 0});
  CHECK(same.x_min == doctest::Approx(0.0));
  CHECK(same.y_max == doctest::Approx(10.0));

  Box clipped = decode_box(anchor, {0.5, 0, 0, 0}, ImageSize{8, 8});
  CHECK(clipped.x_max == doctest::Approx(8.0));
}

TEST_CASE("encode/decode errors") {
  CHECK_THROWS(encode_box({0, 0, 0, 10}, {0, 0, 10, 10}));
  CHECK_THROWS(encode_box({0, 0, 10, 0}, {0, 0, 10, 10}));
  double nan = std::nan("");
  CHECK_THROWS(decode_box({0, 0, 10, 10}, {nan, 0, 0, 0}));
}

TEST_CASE("encode/decode round-trip on 1000 random pairs") {
  Rng rng(404);
  for (int i = 0; i < 1000; ++i) {
    Box anchor = random_box(rng), gt = random_box(rng);
    Box back = decode_box(anchor, encode_box(anchor, gt));
    CHECK(std::abs(back.x_min - gt.x_min) < 1e-6);
    CHECK(std::abs(back.y_min - gt.y_min) < 1e-6);
    CHECK(std::abs(back.x_max - gt.x_max) < 1e-6);
    CHECK(std::abs(back.y_max - gt.y_max) < 1e-6);
  }
}

TEST_CASE("generate_anchors hand cases") {
  AnchorGrid g;
  g.stride = 16;
  g.scales = {1};
  g.aspect_ratios = {1};
  g.feat_h = g.feat_w = 1;
  auto a = generate_anchors(g);
  REQUIRE(a.size() == 1);
  CHECK(a[0].x_min == doctest::Approx(0.0));
  CHECK(a[0].y_min == doctest::Approx(0.0));
  CHECK(a[0].x_max == doctest::Approx(16.0));
  CHECK(a[0].y_max == doctest::Approx(16.0));

  g.aspect_ratios = {4};
  auto wide = generate_anchors(g);
  CHECK(wide[0].width() == doctest::Approx(32.0));
  CHECK(wide[0].height() == doctest::Approx(8.0));
  CHECK(wide[0].area() == doctest::Approx(256.0));
}

TEST_CASE("generate_anchors count and ordering") {
  AnchorGrid g;
  g.stride = 8;
  g.scales = {1, 2, 4};
  g.aspect_ratios = {0.5, 1, 2};
  g.feat_h = 4;
  g.feat_w = 5;
  auto a = generate_anchors(g);
  CHECK(static_cast<int>(a.size()) == 9 * 4 * 5);
  // row-major cells: anchor block for cell (i, j) starts at (i*W + j)*9
  for (int i = 0; i < g.feat_h; ++i)
    for (int j = 0; j < g.feat_w; ++j) {
      const Box& first = a[static_cast<size_t>((i * g.feat_w + j) * 9)];
      CHECK(first.cx() == doctest::Approx((j + 0.5) * g.stride));
      CHECK(first.cy() == doctest::Approx((i + 0.5) * g.stride));
    }
  // scale-major, ratio-minor within a cell; area constant across ratios
  for (int s = 0; s < 3; ++s) {
    double area0 = a[static_cast<size_t>(s * 3)].area();
    for (int r = 1; r < 3; ++r)
      CHECK(a[static_cast<size_t>(s * 3 + r)].area() == doctest::Approx(area0));
  }
}

TEST_CASE("generate_anchors empty scales/ratios error") {
  AnchorGrid g;
  g.feat_h = g.feat_w = 2;
  g.scales = {};
  CHECK_THROWS(generate_anchors(g));
  g.scales = {1};
  g.aspect_ratios = {};
  CHECK_THROWS(generate_anchors(g));
}

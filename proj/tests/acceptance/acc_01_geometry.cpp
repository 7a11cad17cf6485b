// Geometry vs naive reference implementations: IoU, NMS, box encode/decode,
// anchor generation; 1000 seeded random instances each.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "acc_common.hpp"
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

// Independent anchor construction straight from the definition.
std::vector<Box> naive_anchors(const AnchorGrid& g) {
  std::vector<Box> out;
  for (int i = 0; i < g.feat_h; ++i)
    for (int j = 0; j < g.feat_w; ++j)
      for (double s : g.scales)
        for (double r : g.aspect_ratios) {
          double cx = (j + 0.5) * g.stride, cy = (i + 0.5) * g.stride;
          double w = g.stride * s * std::sqrt(r), h = g.stride * s / std::sqrt(r);
          out.push_back({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
        }
  return out;
}

}  // namespace

int main() {
  int failures = 0;
  std::ostringstream detail;

  {  // IoU
    Rng rng(1001);
    int bad = 0;
    for (int t = 0; t < 1000; ++t) {
      Box a = random_box(rng), b = random_box(rng);
      if (std::abs(iou(a, b) - naive_iou(a, b)) >= 1e-9) ++bad;
    }
    if (iou({0, 0, 2, 2}, {1, 1, 3, 3}) != 1.0 / 7.0) ++bad;
    if (bad) ++failures, detail << "iou mismatches=" << bad << "; ";
  }
  {  // NMS
    Rng rng(1002);
    int bad = 0;
    for (int t = 0; t < 1000; ++t) {
      int n = rng.uniform_int(0, 50);
      std::vector<Box> boxes;
      std::vector<double> scores;
      for (int i = 0; i < n; ++i) {
        boxes.push_back(random_box(rng, 40));
        scores.push_back(rng.uniform());
      }
      double thresh = rng.uniform(0.1, 0.9);
      if (nms(boxes, scores, thresh) != naive_nms(boxes, scores, thresh)) ++bad;
    }
    if (bad) ++failures, detail << "nms mismatches=" << bad << "; ";
  }
  {  // encode/decode round-trip
    Rng rng(1003);
    int bad = 0;
    for (int t = 0; t < 1000; ++t) {
      Box anchor = random_box(rng), gt = random_box(rng);
      Box back = decode_box(anchor, encode_box(anchor, gt));
      if (std::abs(back.x_min - gt.x_min) >= 1e-6 || std::abs(back.y_min - gt.y_min) >= 1e-6 ||
          std::abs(back.x_max - gt.x_max) >= 1e-6 || std::abs(back.y_max - gt.y_max) >= 1e-6)
        ++bad;
    }
    if (bad) ++failures, detail << "encode/decode mismatches=" << bad << "; ";
  }
  {  // anchors
    Rng rng(1004);
    int bad = 0;
    for (int t = 0; t < 1000; ++t) {
      AnchorGrid g;
      g.stride = rng.uniform_int(4, 32);
      g.feat_h = rng.uniform_int(1, 6);
      g.feat_w = rng.uniform_int(1, 6);
      int ns = rng.uniform_int(1, 3), nr = rng.uniform_int(1, 3);
      for (int i = 0; i < ns; ++i) g.scales.push_back(rng.uniform(0.5, 4));
      for (int i = 0; i < nr; ++i) g.aspect_ratios.push_back(rng.uniform(0.25, 4));
      auto a = generate_anchors(g), b = naive_anchors(g);
      if (a.size() != b.size()) {
        ++bad;
        continue;
      }
      for (size_t i = 0; i < a.size(); ++i)
        if (std::abs(a[i].x_min - b[i].x_min) >= 1e-9 ||
            std::abs(a[i].y_min - b[i].y_min) >= 1e-9 ||
            std::abs(a[i].x_max - b[i].x_max) >= 1e-9 ||
            std::abs(a[i].y_max - b[i].y_max) >= 1e-9) {
          ++bad;
          break;
        }
    }
    if (bad) ++failures, detail << "anchor mismatches=" << bad << "; ";
  }

  return finish_criterion(1, "geometry oracle equivalence", failures == 0,
                          failures == 0 ? "4x1000 seeded instances" : detail.str());
}

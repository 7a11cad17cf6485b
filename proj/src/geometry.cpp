#include "mmtod/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mmtod {

double iou(const Box& a, const Box& b) {
  double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0 || iy <= 0) return 0.0;
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return inter / uni;
}

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_thresh) {
  if (boxes.size() != scores.size())
    throw std::invalid_argument("nms: boxes/scores size mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  // stable sort keeps lower input index first on score ties
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
  });
  std::vector<int> kept;
  std::vector<char> suppressed(boxes.size(), 0);
  for (size_t oi = 0; oi < order.size(); ++oi) {
    int i = order[oi];
    if (suppressed[static_cast<size_t>(i)]) continue;
    kept.push_back(i);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      int j = order[oj];
      if (suppressed[static_cast<size_t>(j)]) continue;
      if (iou(boxes[static_cast<size_t>(i)], boxes[static_cast<size_t>(j)]) > iou_thresh)
        suppressed[static_cast<size_t>(j)] = 1;
    }
  }
  return kept;
}

RegressionTarget encode_box(const Box& anchor, const Box& gt) {
  double wa = anchor.width(), ha = anchor.height();
  if (wa <= 0 || ha <= 0) throw std::invalid_argument("encode_box: degenerate anchor");
  double wg = gt.width(), hg = gt.height();
  if (wg <= 0 || hg <= 0) throw std::invalid_argument("encode_box: degenerate gt box");
  RegressionTarget t;
  t.tx = (gt.cx() - anchor.cx()) / wa;
  t.ty = (gt.cy() - anchor.cy()) / ha;
  t.tw = std::log(wg / wa);
  t.th = std::log(hg / ha);
  return t;
}

Box decode_box(const Box& anchor, const RegressionTarget& t, std::optional<ImageSize> clip_to) {
  if (!std::isfinite(t.tx) || !std::isfinite(t.ty) || !std::isfinite(t.tw) ||
      !std::isfinite(t.th))
    throw std::invalid_argument("decode_box: non-finite deltas");
  double wa = anchor.width(), ha = anchor.height();
  if (wa <= 0 || ha <= 0) throw std::invalid_argument("decode_box: degenerate anchor");
  double cx = anchor.cx() + t.tx * wa;
  double cy = anchor.cy() + t.ty * ha;
  double w = wa * std::exp(t.tw);
  double h = ha * std::exp(t.th);
  Box b{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  if (clip_to) {
    double W = clip_to->width, H = clip_to->height;
    b.x_min = std::clamp(b.x_min, 0.0, W);
    b.x_max = std::clamp(b.x_max, 0.0, W);
    b.y_min = std::clamp(b.y_min, 0.0, H);
    b.y_max = std::clamp(b.y_max, 0.0, H);
  }
  return b;
}

std::vector<Box> generate_anchors(const AnchorGrid& grid) {
  if (grid.scales.empty() || grid.aspect_ratios.empty())
    throw std::invalid_argument("generate_anchors: empty scales or ratios");
  std::vector<Box> anchors;
  anchors.reserve(static_cast<size_t>(grid.total_anchors()));
  for (int i = 0; i < grid.feat_h; ++i) {
    for (int j = 0; j < grid.feat_w; ++j) {
      double cx = (j + 0.5) * grid.stride;
      double cy = (i + 0.5) * grid.stride;
      for (double s : grid.scales) {
        for (double r : grid.aspect_ratios) {
          double w = grid.stride * s * std::sqrt(r);
          double h = grid.stride * s / std::sqrt(r);
          anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return anchors;
}

}  // namespace mmtod

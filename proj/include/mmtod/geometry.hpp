#pragma once

#include <optional>
#include <vector>

namespace mmtod {

// Axis-aligned box in continuous pixel coordinates, origin top-left,
// corner format (no +1 pixel convention).
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x_min + x_max); }
  double cy() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_max >= x_min && y_max >= y_min; }
};

// Dimensionless Faster-RCNN style box deltas.
struct RegressionTarget {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

struct AnchorGrid {
  double stride = 8;
  std::vector<double> scales{1, 2, 4};
  std::vector<double> aspect_ratios{0.5, 1, 2};
  int feat_h = 0;
  int feat_w = 0;

  int anchors_per_cell() const {
    return static_cast<int>(scales.size() * aspect_ratios.size());
  }
  int total_anchors() const { return feat_h * feat_w * anchors_per_cell(); }
};

// intersection area / union area; 0 when the union is empty.
double iou(const Box& a, const Box& b);

// Greedy NMS. Returns kept indices in descending score order; score ties
// are broken by lower input index.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_thresh);

// tx=(cx_gt-cx_a)/w_a, ty=(cy_gt-cy_a)/h_a, tw=log(w_gt/w_a), th=log(h_gt/h_a).
// Throws if the anchor has non-positive width or height.
RegressionTarget encode_box(const Box& anchor, const Box& gt);

struct ImageSize {
  int width = 0;
  int height = 0;
};

// Exact inverse of encode_box; optionally clamps to [0,W]x[0,H].
// Throws on non-finite deltas.
Box decode_box(const Box& anchor, const RegressionTarget& t,
               std::optional<ImageSize> clip_to = std::nullopt);

// One box per (cell row-major, then scale, then ratio). Anchor width is
// stride*scale*sqrt(ratio) and height stride*scale/sqrt(ratio), so the area
// at a fixed scale is constant across ratios. Centers at ((j+0.5)*stride,
// (i+0.5)*stride). Throws if scales or ratios are empty.
std::vector<Box> generate_anchors(const AnchorGrid& grid);

}  // namespace mmtod

#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmtod/data.hpp"
#include "mmtod/geometry.hpp"

namespace mmtod {

struct Detection {
  std::string image_id;
  std::string class_name;
  double score = 0;
  Box box;
};

struct MatchResult {
  std::vector<bool> det_is_tp;   // per detection, in descending-score order
  std::vector<int> det_order;    // indices into the input after sorting
  std::vector<bool> gt_matched;  // per ground-truth box
};

// Greedy IoU matching within one image and one class. Detections are sorted
// by descending score (ties by input order); each detection takes the
// highest-IoU unmatched GT if IoU >= iou_thresh.
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Box>& gts,
                             double iou_thresh = 0.5);

// Area under the precision-recall curve with the precision envelope
// (all-point interpolation). Set voc2007 for the 11-point variant.
// n_gt == 0 -> 0 by definition.
double average_precision(const std::vector<bool>& tp_sorted_by_score, int n_gt,
                         bool voc2007 = false);

struct PrPoint {
  double recall = 0, precision = 0;
};

struct ClassEval {
  double ap = 0;
  int n_gt = 0;
  int tp = 0, fp = 0, missed = 0;
  std::vector<PrPoint> pr_curve;
};

struct MissedGt {
  std::string image_id;
  std::string class_name;
  Box box;
  double nearest_det_iou = 0;   // best IoU over same-class detections in image
  std::string area_bucket;      // small / medium / large
  double max_gt_overlap = 0;    // best IoU with any other GT in the image
};

struct EvalReport {
  std::map<std::string, ClassEval> per_class;
  double map = 0;
  std::vector<std::string> classes_excluded;  // zero-GT classes left out of the mean
  std::vector<MissedGt> missed;
};

// Per-class AP via greedy matching, mAP = mean over classes with n_gt > 0.
// Throws if a detection references an image id absent from the manifest.
EvalReport evaluate(const std::vector<Detection>& dets, const DatasetManifest& manifest,
                    double iou_thresh = 0.5, bool voc2007 = false);

// GT area fraction thresholds for the missed-detection buckets:
// small < 1% of the image, medium < 4%, large otherwise.
std::string area_bucket(double box_area, double image_area);

// Table-1-shaped CSV: one row per method, columns Bicycle, Person, Car, mAP.
// Values are percentages.
void write_comparison_csv(
    const std::vector<std::pair<std::string, std::map<std::string, double>>>& method_rows,
    const std::vector<std::string>& class_columns, const std::string& path);

void write_report_csv(const EvalReport& report, const std::string& path);
void write_report_json(const EvalReport& report, const std::string& path);
void write_pr_curves_csv(const EvalReport& report, const std::string& dir);
void write_missed_csv(const EvalReport& report, const std::string& path);

// Detections file: image_id,class_name,score,x_min,y_min,x_max,y_max
void write_detections_csv(const std::vector<Detection>& dets, const std::string& path);
std::vector<Detection> read_detections_csv(const std::string& path);

}  // namespace mmtod

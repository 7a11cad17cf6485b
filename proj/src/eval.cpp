#include "mmtod/eval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mmtod {

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Box>& gts,
                             double iou_thresh) {
  MatchResult r;
  r.det_order.resize(dets.size());
  std::iota(r.det_order.begin(), r.det_order.end(), 0);
  std::stable_sort(r.det_order.begin(), r.det_order.end(), [&](int a, int b) {
    return dets[static_cast<size_t>(a)].score > dets[static_cast<size_t>(b)].score;
  });
  r.gt_matched.assign(gts.size(), false);
  r.det_is_tp.assign(dets.size(), false);
  for (size_t k = 0; k < r.det_order.size(); ++k) {
    const Detection& d = dets[static_cast<size_t>(r.det_order[k])];
    double best = -1;
    int best_g = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (r.gt_matched[g]) continue;
      double v = iou(d.box, gts[g]);
      if (v >= iou_thresh && v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      r.gt_matched[static_cast<size_t>(best_g)] = true;
      r.det_is_tp[k] = true;
    }
  }
  return r;
}

double average_precision(const std::vector<bool>& tp, int n_gt, bool voc2007) {
  if (n_gt <= 0) return 0.0;
  std::vector<double> recall, precision;
  int tps = 0, fps = 0;
  for (bool t : tp) {
    t ? ++tps : ++fps;
    recall.push_back(static_cast<double>(tps) / n_gt);
    precision.push_back(static_cast<double>(tps) / (tps + fps));
  }
  if (recall.empty()) return 0.0;
  if (voc2007) {
    double ap = 0;
    for (int k = 0; k <= 10; ++k) {
      double r0 = k / 10.0, pmax = 0;
      for (size_t i = 0; i < recall.size(); ++i)
        if (recall[i] >= r0) pmax = std::max(pmax, precision[i]);
      ap += pmax / 11.0;
    }
    return ap;
  }
  // precision envelope, then area under the step curve
  std::vector<double> env = precision;
  for (int i = static_cast<int>(env.size()) - 2; i >= 0; --i)
    env[static_cast<size_t>(i)] =
        std::max(env[static_cast<size_t>(i)], env[static_cast<size_t>(i) + 1]);
  double ap = 0, prev_r = 0;
  for (size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_r) * env[i];
    prev_r = recall[i];
  }
  return ap;
}

std::string area_bucket(double box_area, double image_area) {
  double frac = image_area > 0 ? box_area / image_area : 0;
  if (frac < 0.01) return "small";
  if (frac < 0.04) return "medium";
  return "large";
}

EvalReport evaluate(const std::vector<Detection>& dets, const DatasetManifest& manifest,
                    double iou_thresh, bool voc2007) {
  std::set<std::string> known_ids;
  for (const auto& img : manifest.images) known_ids.insert(img.id);
  for (const auto& d : dets)
    if (!known_ids.count(d.image_id))
      throw std::runtime_error("evaluate: detection references unknown image_id " +
                               d.image_id);

  EvalReport report;
  for (const auto& cls : manifest.classes) {
    // gather per-image dets and gts of this class
    struct Scored {
      double score;
      size_t order;
      bool tp;
    };
    std::vector<Scored> all;
    int n_gt = 0, matched_total = 0;
    size_t order_counter = 0;
    for (const auto& img : manifest.images) {
      std::vector<Detection> img_dets;
      for (const auto& d : dets)
        if (d.image_id == img.id && d.class_name == cls) img_dets.push_back(d);
      std::vector<Box> img_gts;
      std::vector<const Annotation*> gt_ann;
      for (const auto& a : img.annotations)
        if (a.class_name == cls) {
          img_gts.push_back(a.box);
          gt_ann.push_back(&a);
        }
      n_gt += static_cast<int>(img_gts.size());
      MatchResult m = match_detections(img_dets, img_gts, iou_thresh);
      for (size_t k = 0; k < m.det_order.size(); ++k) {
        const Detection& d = img_dets[static_cast<size_t>(m.det_order[k])];
        all.push_back({d.score, order_counter++, m.det_is_tp[k]});
      }
      for (size_t g = 0; g < img_gts.size(); ++g) {
        if (m.gt_matched[g]) {
          ++matched_total;
          continue;
        }
        MissedGt miss;
        miss.image_id = img.id;
        miss.class_name = cls;
        miss.box = img_gts[g];
        for (const auto& d : img_dets)
          miss.nearest_det_iou = std::max(miss.nearest_det_iou, iou(d.box, img_gts[g]));
        miss.area_bucket = area_bucket(img_gts[g].area(),
                                       static_cast<double>(img.width) * img.height);
        for (const auto& a : img.annotations)
          if (&a != gt_ann[g])
            miss.max_gt_overlap = std::max(miss.max_gt_overlap, iou(a.box, img_gts[g]));
        report.missed.push_back(std::move(miss));
      }
    }
    std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
      return a.score > b.score;
    });
    std::vector<bool> tp_seq;
    tp_seq.reserve(all.size());
    for (const auto& s : all) tp_seq.push_back(s.tp);

    ClassEval ce;
    ce.n_gt = n_gt;
    ce.tp = matched_total;
    ce.fp = static_cast<int>(all.size()) - matched_total;
    ce.missed = n_gt - matched_total;
    ce.ap = average_precision(tp_seq, n_gt, voc2007);
    int tps = 0, fps = 0;
    for (bool t : tp_seq) {
      t ? ++tps : ++fps;
      if (n_gt > 0)
        ce.pr_curve.push_back({static_cast<double>(tps) / n_gt,
                               static_cast<double>(tps) / (tps + fps)});
    }
    report.per_class[cls] = std::move(ce);
  }

  double sum = 0;
  int n = 0;
  for (const auto& [cls, ce] : report.per_class) {
    if (ce.n_gt == 0) {
      report.classes_excluded.push_back(cls);
      continue;
    }
    sum += ce.ap;
    ++n;
  }
  report.map = n > 0 ? sum / n : 0.0;
  return report;
}

void write_comparison_csv(
    const std::vector<std::pair<std::string, std::map<std::string, double>>>& method_rows,
    const std::vector<std::string>& class_columns, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_comparison_csv: cannot open " + path);
  f << "method";
  for (const auto& c : class_columns) f << "," << c;
  f << ",mAP\n";
  for (const auto& [method, values] : method_rows) {
    f << method;
    double sum = 0;
    int n = 0;
    for (const auto& c : class_columns) {
      auto it = values.find(c);
      double v = it == values.end() ? 0.0 : it->second;
      f << "," << v;
      sum += v;
      ++n;
    }
    auto it = values.find("mAP");
    f << "," << (it != values.end() ? it->second : (n ? sum / n : 0.0)) << "\n";
  }
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_report_csv: cannot open " + path);
  f << "class,ap,n_gt,tp,fp,missed\n";
  for (const auto& [cls, ce] : report.per_class)
    f << cls << "," << ce.ap << "," << ce.n_gt << "," << ce.tp << "," << ce.fp << ","
      << ce.missed << "\n";
  f << "mAP," << report.map << ",,,,\n";
}

void write_report_json(const EvalReport& report, const std::string& path) {
  json j;
  j["map"] = report.map;
  j["classes_excluded"] = report.classes_excluded;
  for (const auto& [cls, ce] : report.per_class) {
    json jc;
    jc["ap"] = ce.ap;
    jc["n_gt"] = ce.n_gt;
    jc["tp"] = ce.tp;
    jc["fp"] = ce.fp;
    jc["missed"] = ce.missed;
    j["per_class"][cls] = jc;
  }
  j["missed"] = json::array();
  for (const auto& m : report.missed)
    j["missed"].push_back({{"image_id", m.image_id},
                           {"class", m.class_name},
                           {"bbox", {m.box.x_min, m.box.y_min, m.box.x_max, m.box.y_max}},
                           {"nearest_det_iou", m.nearest_det_iou},
                           {"area_bucket", m.area_bucket},
                           {"max_gt_overlap", m.max_gt_overlap}});
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_report_json: cannot open " + path);
  f << j.dump(1) << "\n";
}

void write_pr_curves_csv(const EvalReport& report, const std::string& dir) {
  fs::create_directories(dir);
  for (const auto& [cls, ce] : report.per_class) {
    std::ofstream f((fs::path(dir) / ("pr_" + cls + ".csv")).string());
    f << "recall,precision\n";
    for (const auto& p : ce.pr_curve) f << p.recall << "," << p.precision << "\n";
  }
}

void write_missed_csv(const EvalReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_missed_csv: cannot open " + path);
  f << "image_id,class,x_min,y_min,x_max,y_max,nearest_det_iou,area_bucket,max_gt_overlap\n";
  for (const auto& m : report.missed)
    f << m.image_id << "," << m.class_name << "," << m.box.x_min << "," << m.box.y_min << ","
      << m.box.x_max << "," << m.box.y_max << "," << m.nearest_det_iou << ","
      << m.area_bucket << "," << m.max_gt_overlap << "\n";
}

void write_detections_csv(const std::vector<Detection>& dets, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_detections_csv: cannot open " + path);
  f << "image_id,class_name,score,x_min,y_min,x_max,y_max\n";
  f.precision(17);
  for (const auto& d : dets)
    f << d.image_id << "," << d.class_name << "," << d.score << "," << d.box.x_min << ","
      << d.box.y_min << "," << d.box.x_max << "," << d.box.y_max << "\n";
}

std::vector<Detection> read_detections_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_detections_csv: cannot open " + path);
  std::vector<Detection> dets;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string field;
    Detection d;
    std::getline(is, d.image_id, ',');
    std::getline(is, d.class_name, ',');
    std::getline(is, field, ',');
    d.score = std::stod(field);
    std::getline(is, field, ',');
    d.box.x_min = std::stod(field);
    std::getline(is, field, ',');
    d.box.y_min = std::stod(field);
    std::getline(is, field, ',');
    d.box.x_max = std::stod(field);
    std::getline(is, field, ',');
    d.box.y_max = std::stod(field);
    dets.push_back(std::move(d));
  }
  return dets;
}

}  // namespace mmtod

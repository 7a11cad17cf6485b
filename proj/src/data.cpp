#include "mmtod/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "mmtod/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mmtod {

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::kThermal: return "thermal";
    case Modality::kRgb: return "rgb";
    case Modality::kPseudoRgb: return "pseudo_rgb";
  }
  return "thermal";
}

Modality modality_from_name(const std::string& s) {
  if (s == "thermal") return Modality::kThermal;
  if (s == "rgb") return Modality::kRgb;
  if (s == "pseudo_rgb") return Modality::kPseudoRgb;
  throw std::invalid_argument("unknown modality: " + s);
}

int DatasetManifest::class_index(const std::string& name) const {
  for (size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == name) return static_cast<int>(i);
  return -1;
}

std::map<std::string, int> DatasetManifest::instance_counts() const {
  std::map<std::string, int> counts;
  for (const auto& c : classes) counts[c] = 0;
  for (const auto& img : images)
    for (const auto& a : img.annotations) ++counts[a.class_name];
  return counts;
}

size_t DatasetManifest::total_instances() const {
  size_t n = 0;
  for (const auto& img : images) n += img.annotations.size();
  return n;
}

static void validate_manifest(const DatasetManifest& m, bool check_files,
                              std::vector<std::string>& errors) {
  for (const auto& img : m.images) {
    if (check_files && !fs::exists(fs::path(m.root) / img.file))
      errors.push_back("image " + img.id + ": missing file " + img.file);
    for (const auto& a : img.annotations) {
      if (m.class_index(a.class_name) < 0)
        errors.push_back("image " + img.id + ": unknown class '" + a.class_name + "'");
      const Box& b = a.box;
      if (!b.valid() || b.area() <= 0)
        errors.push_back("image " + img.id + ": degenerate box");
      else if (b.x_min < 0 || b.y_min < 0 || b.x_max > img.width || b.y_max > img.height)
        errors.push_back("image " + img.id + ": box out of bounds");
    }
  }
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
  json j;
  f >> j;

  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.split = j.value("split", "train");

  std::map<std::string, size_t> by_id;
  for (const auto& ji : j.at("images")) {
    ImageRecord rec;
    rec.id = ji.at("id").get<std::string>();
    rec.file = ji.at("file").get<std::string>();
    rec.width = ji.at("width").get<int>();
    rec.height = ji.at("height").get<int>();
    rec.modality = modality_from_name(ji.at("modality").get<std::string>());
    by_id[rec.id] = m.images.size();
    m.images.push_back(std::move(rec));
  }
  std::vector<std::string> errors;
  for (const auto& ja : j.at("annotations")) {
    std::string image_id = ja.at("image_id").get<std::string>();
    auto it = by_id.find(image_id);
    if (it == by_id.end()) {
      errors.push_back("annotation references unknown image_id " + image_id);
      continue;
    }
    Annotation a;
    a.class_name = ja.at("class").get<std::string>();
    auto bb = ja.at("bbox").get<std::vector<double>>();
    if (bb.size() != 4) {
      errors.push_back("image " + image_id + ": bbox must have 4 values");
      continue;
    }
    a.box = {bb[0], bb[1], bb[2], bb[3]};
    m.images[it->second].annotations.push_back(std::move(a));
  }
  validate_manifest(m, /*check_files=*/true, errors);
  if (!errors.empty()) {
    std::string msg = "manifest validation failed:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw std::runtime_error(msg);
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  json j;
  j["schema_version"] = 1;
  j["classes"] = manifest.classes;
  j["split"] = manifest.split;
  j["images"] = json::array();
  j["annotations"] = json::array();
  for (const auto& img : manifest.images) {
    j["images"].push_back({{"id", img.id},
                           {"file", img.file},
                           {"width", img.width},
                           {"height", img.height},
                           {"modality", modality_name(img.modality)}});
    for (const auto& a : img.annotations)
      j["annotations"].push_back(
          {{"image_id", img.id},
           {"class", a.class_name},
           {"bbox", {a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max}}});
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
  f << j.dump(1) << "\n";
}

ImageSample load_sample(const DatasetManifest& manifest, size_t index) {
  const ImageRecord& rec = manifest.images.at(index);
  ImageSample s;
  s.id = rec.id;
  s.modality = rec.modality;
  s.pixels = read_image((fs::path(manifest.root) / rec.file).string());
  s.annotations = rec.annotations;
  return s;
}

// ---- synthetic corpus ----

namespace {

struct ObjectSpec {
  std::string class_name;
  Box box;
};

// Samples object shapes; returns exact render bounds.
ObjectSpec sample_object(int img, Rng& rng, int cls) {
  ObjectSpec o;
  double S = img;
  if (cls == 0) {  // car: wide rectangle
    o.class_name = "car";
    double w = rng.uniform(14, 24) * S / 64.0;
    double h = rng.uniform(8, 12) * S / 64.0;
    double x = rng.uniform(1, S - w - 1), y = rng.uniform(1, S - h - 1);
    o.box = {x, y, x + w, y + h};
  } else if (cls == 1) {  // person: tall ellipse
    o.class_name = "person";
    double rx = rng.uniform(3, 5) * S / 64.0;
    double ry = rng.uniform(8, 12) * S / 64.0;
    double cx = rng.uniform(rx + 1, S - rx - 1), cy = rng.uniform(ry + 1, S - ry - 1);
    o.box = {cx - rx, cy - ry, cx + rx, cy + ry};
  } else {  // bicycle: two adjacent circles
    o.class_name = "bicycle";
    double r = rng.uniform(3.5, 5.5) * S / 64.0;
    double cx = rng.uniform(2 * r + 1, S - 2 * r - 1);
    double cy = rng.uniform(r + 1, S - r - 1);
    o.box = {cx - 2 * r, cy - r, cx + 2 * r, cy + r};
  }
  return o;
}

// coverage in [0,1]: 1 inside the shape, 0 outside
double shape_coverage(const ObjectSpec& o, double px, double py) {
  const Box& b = o.box;
  if (px < b.x_min || px > b.x_max || py < b.y_min || py > b.y_max) return 0.0;
  if (o.class_name == "car") return 1.0;
  if (o.class_name == "person") {
    double rx = b.width() / 2, ry = b.height() / 2;
    double dx = (px - b.cx()) / rx, dy = (py - b.cy()) / ry;
    return dx * dx + dy * dy <= 1.0 ? 1.0 : 0.0;
  }
  // bicycle: two circles of radius r centered at +-r from box center
  double r = b.height() / 2;
  double cy = b.cy();
  double c1x = b.cx() - r, c2x = b.cx() + r;
  double d1 = (px - c1x) * (px - c1x) + (py - cy) * (py - cy);
  double d2 = (px - c2x) * (px - c2x) + (py - cy) * (py - cy);
  return (d1 <= r * r || d2 <= r * r) ? 1.0 : 0.0;
}

Tensor render_thermal(int size, const std::vector<ObjectSpec>& objects, double noise,
                      Rng& rng) {
  Tensor img({1, size, size});
  // background: vertical gradient plus a few warm/cool blobs
  struct Blob {
    double cx, cy, sigma, amp;
  };
  std::vector<Blob> blobs;
  int n_blobs = rng.uniform_int(2, 4);
  for (int i = 0; i < n_blobs; ++i)
    blobs.push_back({rng.uniform(0, size), rng.uniform(0, size), rng.uniform(4, 10),
                     rng.uniform(-0.12, 0.18)});
  std::vector<double> temps;
  for (const auto& o : objects) {
    double t = o.class_name == "person" ? 0.78 : (o.class_name == "car" ? 0.68 : 0.62);
    temps.push_back(t + rng.uniform(-0.04, 0.04));
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double v = 0.35 + 0.15 * y / size;
      for (const auto& bl : blobs) {
        double d2 = (x - bl.cx) * (x - bl.cx) + (y - bl.cy) * (y - bl.cy);
        v += bl.amp * std::exp(-d2 / (2 * bl.sigma * bl.sigma));
      }
      for (size_t i = 0; i < objects.size(); ++i)
        if (shape_coverage(objects[i], x + 0.5, y + 0.5) > 0) v = temps[i];
      v += rng.normal(0.0, noise);
      img.at(0, y, x) = std::clamp(v, 0.0, 1.0);
    }
  return img;
}

Tensor render_rgb(int size, const std::vector<ObjectSpec>& objects, Rng& rng) {
  Tensor img({3, size, size});
  // one brightness draw on a fixed base color, so background variation stays
  // one-dimensional across channels
  double bright = rng.uniform(0.8, 1.1);
  double bg[3] = {0.68 * bright, 0.66 * bright, 0.62 * bright};
  std::vector<std::array<double, 3>> colors;
  for (const auto& o : objects) {
    std::array<double, 3> c;
    if (o.class_name == "car")
      c = {0.8, 0.15, 0.15};
    else if (o.class_name == "person")
      c = {0.15, 0.25, 0.8};
    else
      c = {0.15, 0.7, 0.2};
    for (auto& v : c) v = std::clamp(v + rng.uniform(-0.08, 0.08), 0.0, 1.0);
    colors.push_back(c);
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      // faint checker texture on the background
      double tex = (((x / 4) + (y / 4)) % 2 == 0) ? 0.02 : -0.02;
      double px[3] = {bg[0] + tex, bg[1] + tex, bg[2] + tex};
      for (size_t i = 0; i < objects.size(); ++i)
        if (shape_coverage(objects[i], x + 0.5, y + 0.5) > 0)
          for (int c = 0; c < 3; ++c) px[c] = colors[i][static_cast<size_t>(c)];
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = std::clamp(px[c] + rng.normal(0.0, 0.015), 0.0, 1.0);
    }
  return img;
}

std::vector<ObjectSpec> sample_scene(const SynthConfig& cfg, Rng& rng) {
  double min_dim = std::min(14.0, 24.0) * cfg.image_size / 64.0;
  if (min_dim + 2 >= cfg.image_size)
    throw std::invalid_argument("synth_generate: image size too small for objects");
  int n = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  std::vector<ObjectSpec> objects;
  for (int i = 0; i < n; ++i) {
    int cls = rng.uniform_int(0, 2);
    for (int attempt = 0; attempt < 10; ++attempt) {
      ObjectSpec o = sample_object(cfg.image_size, rng, cls);
      bool ok = true;
      for (const auto& other : objects)
        if (iou(o.box, other.box) > 0.25) ok = false;
      if (ok) {
        objects.push_back(o);
        break;
      }
    }
  }
  return objects;
}

SynthCorpus make_corpus(const SynthConfig& cfg, int n, Modality modality,
                        const std::string& prefix, const std::string& split, Rng rng) {
  SynthCorpus corpus;
  corpus.manifest.split = split;
  for (int i = 0; i < n; ++i) {
    Rng scene_rng = rng.fork();
    auto objects = sample_scene(cfg, scene_rng);
    Tensor img = modality == Modality::kThermal
                     ? render_thermal(cfg.image_size, objects, cfg.thermal_noise, scene_rng)
                     : render_rgb(cfg.image_size, objects, scene_rng);
    ImageRecord rec;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%05d", prefix.c_str(), i);
    rec.id = buf;
    rec.file = rec.id + (modality == Modality::kThermal ? ".pgm" : ".ppm");
    rec.width = cfg.image_size;
    rec.height = cfg.image_size;
    rec.modality = modality;
    for (const auto& o : objects) rec.annotations.push_back({o.class_name, o.box});
    corpus.manifest.images.push_back(std::move(rec));
    corpus.images.push_back(std::move(img));
  }
  return corpus;
}

}  // namespace

SynthResult synth_generate(const SynthConfig& cfg) {
  if (cfg.min_objects > cfg.max_objects || cfg.min_objects < 0)
    throw std::invalid_argument("synth_generate: bad objects-per-image range");
  SynthResult r;
  // disjoint scene streams per corpus: thermal and RGB are unpaired
  Rng root(cfg.seed);
  Rng rng_tt(root.next_u64() ^ 0x7468726d31ull);
  Rng rng_te(root.next_u64() ^ 0x7468726d32ull);
  Rng rng_rgb(root.next_u64() ^ 0x726762ull);
  r.thermal_train = make_corpus(cfg, cfg.n_thermal_train, Modality::kThermal, "tt", "train",
                                rng_tt);
  r.thermal_test =
      make_corpus(cfg, cfg.n_thermal_test, Modality::kThermal, "te", "test", rng_te);
  r.rgb = make_corpus(cfg, cfg.n_rgb, Modality::kRgb, "rg", "train", rng_rgb);
  return r;
}

void write_corpus(SynthCorpus& corpus, const std::string& dir) {
  fs::create_directories(dir);
  corpus.manifest.root = dir;
  for (size_t i = 0; i < corpus.images.size(); ++i)
    write_image((fs::path(dir) / corpus.manifest.images[i].file).string(), corpus.images[i]);
  save_manifest(corpus.manifest, (fs::path(dir) / "manifest.json").string());
}

DatasetManifest make_split(const DatasetManifest& manifest, double fraction, uint64_t seed) {
  if (fraction <= 0 || fraction > 1)
    throw std::invalid_argument("make_split: fraction must be in (0,1]");
  size_t n = manifest.images.size();
  size_t keep = static_cast<size_t>(std::ceil(fraction * static_cast<double>(n)));
  Rng rng(seed);
  std::vector<int> perm = rng.permutation(static_cast<int>(n));
  // taking a prefix of one fixed permutation makes smaller splits nested
  std::vector<int> chosen(perm.begin(), perm.begin() + static_cast<long>(keep));
  std::sort(chosen.begin(), chosen.end());
  DatasetManifest out;
  out.root = manifest.root;
  out.classes = manifest.classes;
  out.split = manifest.split;
  for (int idx : chosen) out.images.push_back(manifest.images[static_cast<size_t>(idx)]);
  return out;
}

ResampleResult resample(const DatasetManifest& manifest, int w, int h,
                        const std::string& out_dir) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("resample: bad target size");
  fs::create_directories(out_dir);
  ResampleResult res;
  res.manifest.root = out_dir;
  res.manifest.classes = manifest.classes;
  res.manifest.split = manifest.split;
  for (size_t i = 0; i < manifest.images.size(); ++i) {
    const ImageRecord& rec = manifest.images[i];
    double sx = static_cast<double>(w) / rec.width;
    double sy = static_cast<double>(h) / rec.height;
    ImageRecord out = rec;
    out.width = w;
    out.height = h;
    out.annotations.clear();
    for (const auto& a : rec.annotations) {
      Annotation sa = a;
      sa.box = {a.box.x_min * sx, a.box.y_min * sy, a.box.x_max * sx, a.box.y_max * sy};
      if (sa.box.area() < 1.0) {
        ++res.dropped_boxes;
        continue;
      }
      out.annotations.push_back(std::move(sa));
    }
    if (rec.width != w || rec.height != h) {
      Tensor img = read_image((fs::path(manifest.root) / rec.file).string());
      write_image((fs::path(out_dir) / out.file).string(), resize_bilinear(img, w, h));
    } else {
      fs::copy_file(fs::path(manifest.root) / rec.file, fs::path(out_dir) / out.file,
                    fs::copy_options::overwrite_existing);
    }
    res.manifest.images.push_back(std::move(out));
  }
  save_manifest(res.manifest, (fs::path(out_dir) / "manifest.json").string());
  return res;
}

void write_stats_csv(const std::vector<std::pair<std::string, const DatasetManifest*>>& rows,
                     const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_stats_csv: cannot open " + path);
  std::vector<std::string> classes;
  if (!rows.empty()) classes = rows.front().second->classes;
  f << "dataset";
  for (const auto& c : classes) f << "," << c;
  f << ",total\n";
  for (const auto& [name, m] : rows) {
    auto counts = m->instance_counts();
    f << name;
    size_t total = 0;
    for (const auto& c : classes) {
      f << "," << counts[c];
      total += static_cast<size_t>(counts[c]);
    }
    f << "," << total << "\n";
  }
}

}  // namespace mmtod

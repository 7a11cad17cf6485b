#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmtod/geometry.hpp"
#include "mmtod/rng.hpp"
#include "mmtod/tensor.hpp"

namespace mmtod {

enum class Modality { kThermal, kRgb, kPseudoRgb };

std::string modality_name(Modality m);
Modality modality_from_name(const std::string& s);

struct Annotation {
  std::string class_name;
  Box box;
};

struct ImageRecord {
  std::string id;
  std::string file;  // relative to manifest root
  int width = 0, height = 0;
  Modality modality = Modality::kThermal;
  std::vector<Annotation> annotations;
};

struct ImageSample {
  std::string id;
  Modality modality = Modality::kThermal;
  Tensor pixels;  // [C,H,W] in [0,1]
  std::vector<Annotation> annotations;
};

struct DatasetManifest {
  std::string root;  // directory the image files are relative to
  std::vector<std::string> classes{"car", "person", "bicycle"};
  std::string split = "train";
  std::vector<ImageRecord> images;

  int class_index(const std::string& name) const;  // -1 if unknown
  std::map<std::string, int> instance_counts() const;
  size_t total_instances() const;
};

// Loads and validates a manifest JSON. All validation failures (out-of-bounds
// box, unknown class, missing image file) are itemized in the thrown message.
DatasetManifest load_manifest(const std::string& path);

void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Reads the image file for one record.
ImageSample load_sample(const DatasetManifest& manifest, size_t index);

struct SynthConfig {
  int n_thermal_train = 400;
  int n_thermal_test = 100;
  int n_rgb = 2000;
  int image_size = 64;
  int min_objects = 1;
  int max_objects = 3;
  double thermal_noise = 0.03;
  uint64_t seed = 0;
};

struct SynthCorpus {
  DatasetManifest manifest;
  std::vector<Tensor> images;  // aligned with manifest.images
};

struct SynthResult {
  SynthCorpus thermal_train;
  SynthCorpus thermal_test;
  SynthCorpus rgb;
};

// Renders the synthetic cross-spectral corpus: car -> wide rectangle,
// person -> tall ellipse, bicycle -> two adjacent circles, over structured
// backgrounds. Thermal and RGB corpora come from disjoint scene seeds
// (unpaired by construction). Deterministic under cfg.seed.
SynthResult synth_generate(const SynthConfig& cfg);

// Writes images + manifest.json into dir; updates manifest.root/file fields.
void write_corpus(SynthCorpus& corpus, const std::string& dir);

// Deterministic image-level subsample of ceil(fraction*N) images. For a fixed
// seed the 1/4 split is a subset of the 1/2 split is a subset of full.
DatasetManifest make_split(const DatasetManifest& manifest, double fraction, uint64_t seed);

struct ResampleResult {
  DatasetManifest manifest;
  int dropped_boxes = 0;  // boxes that collapsed below 1px area
};

// Bilinearly resizes every image to (w,h), scales boxes accordingly, and
// writes the new corpus under out_dir.
ResampleResult resample(const DatasetManifest& manifest, int w, int h,
                        const std::string& out_dir);

// Table of per-class instance counts, one row per manifest: dataset,<classes...>,total
void write_stats_csv(const std::vector<std::pair<std::string, const DatasetManifest*>>& rows,
                     const std::string& path);

}  // namespace mmtod

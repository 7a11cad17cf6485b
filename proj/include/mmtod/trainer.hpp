#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmtod/data.hpp"
#include "mmtod/detector.hpp"
#include "mmtod/translator.hpp"

namespace mmtod {

struct TrainerConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  int epochs = 8;
  int lr_decay_epoch = -1;     // epoch index at which lr is multiplied once
  double lr_decay_factor = 0.1;
  double generator_lr_scale = 0.1;  // joint phase: translator generator lr = lr * scale
  bool horizontal_flip = true;
  uint64_t seed = 0;
  DetectorConfig det;

  // which blocks the joint phase updates (all on by default; discriminators
  // and the reverse generator are always frozen in the joint phase)
  bool update_tir = true;
  bool update_rgb = true;
  bool update_conv = true;
  bool update_top = true;
  bool update_generator = true;

  std::string to_json() const;
  static TrainerConfig from_json(const std::string& s);
  uint64_t hash() const;
};

struct StepLosses {
  double rpn_cls = 0, rpn_reg = 0, head_cls = 0, head_reg = 0;
  double total() const { return rpn_cls + rpn_reg + head_cls + head_reg; }
};

// Everything non-differentiable about one training step, frozen so the loss
// becomes a smooth function of the parameters (used both by training and by
// the finite-difference gradient checks).
struct StepPlan {
  AnchorAssignment assign;
  std::vector<RegressionTarget> rpn_gt;  // per anchor; positives only are read
  int n_reg = 1;                         // anchor locations
  std::vector<Box> rois;
  std::vector<int> roi_labels;           // 0 = background
  std::vector<RegressionTarget> roi_gt;  // per RoI
};

// Builds the plan from one forward pass. If state_out is given, the pass's
// PipelineState is moved there (its layer caches are then current, so
// run_detection_step_with_state can reuse it directly).
StepPlan make_step_plan(DetectorModel& model, Generator* t2r, const ImageSample& sample,
                        const std::vector<std::string>& classes, Rng& rng,
                        PipelineState* state_out = nullptr);

// Forward (and optionally backward) of the full detection objective for one
// image under a fixed plan. Backward accumulates into all blocks, including
// the translator generator when given; freezing is done by not stepping.
StepLosses run_detection_step(DetectorModel& model, Generator* t2r,
                              const Tensor& thermal_image, const StepPlan& plan,
                              bool backward);

// Variant reusing a PipelineState whose layer caches are current.
StepLosses run_detection_step_with_state(DetectorModel& model, Generator* t2r,
                                         PipelineState& st, const StepPlan& plan,
                                         bool backward);

// A resumable training run: model (+ optional translator for the joint
// phase), optimizer states, data RNG, and loss history.
struct TrainRun {
  TrainerConfig cfg;
  std::unique_ptr<DetectorModel> model;
  std::unique_ptr<TranslatorPair> translator;  // joint phase only
  TranslatorTrainConfig translator_cfg;        // to rebuild the pair on load
  bool has_translator = false;
  SgdMomentum opt_det;
  SgdMomentum opt_gen;
  Rng rng{0};
  int completed_epochs = 0;
  std::vector<StepLosses> history;
};

enum class BranchKind { kThermal, kRgb };

// Fresh single-branch run for baseline/RGB pre-training.
TrainRun make_pretrain_run(const TrainerConfig& cfg, BranchKind branch);

// Joint run initialized per Algorithm 1's inputs: thermal backbone + top from
// the thermal pre-training checkpoint, RGB backbone from the RGB checkpoint,
// translator from its checkpoint. Fusion conv starts as the thermal-selection
// kernel plus small noise on the RGB block.
TrainRun make_mmtod_run(const TrainerConfig& cfg, const std::string& thermal_ck,
                        const std::string& rgb_ck, const std::string& translator_ck);

// Trains until cfg.epochs, appending to the loss CSV and checkpointing each
// epoch when out_dir is non-empty. A non-finite loss aborts with the
// last-good checkpoint retained on disk. Throws on an empty dataset.
void run_training(TrainRun& run, const DatasetManifest& dataset,
                  const std::string& out_dir = "");

void save_trainrun(TrainRun& run, const std::string& path);
TrainRun load_trainrun(const std::string& path);

// Final inference-only detector checkpoint. For a multimodal model the
// thermal->RGB generator is stored alongside so detection is standalone.
struct DetectorBundle {
  TrainerConfig cfg;
  std::unique_ptr<DetectorModel> model;
  std::unique_ptr<Generator> t2r;  // multimodal only
  TranslatorTrainConfig t2r_cfg;
};

void save_detector(DetectorModel& model, Generator* t2r,
                   const TranslatorTrainConfig* t2r_cfg, const TrainerConfig& cfg,
                   const std::string& path);
DetectorBundle load_detector(const std::string& path);

// Loads every sample of a manifest into memory.
std::vector<ImageSample> load_all_samples(const DatasetManifest& manifest);

// Runs detect over a manifest; returns all detections (and optionally the
// mean per-image latency in seconds).
std::vector<Detection> detect_all(DetectorModel& model, Generator* t2r,
                                  const std::vector<ImageSample>& samples,
                                  const DatasetManifest& manifest, const DetectConfig& dcfg,
                                  double* mean_latency_sec = nullptr);

}  // namespace mmtod

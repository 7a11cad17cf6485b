// Command-line surface: corpus synthesis, translator/baseline/joint training,
// detection, evaluation, ablations, and report consolidation.
//
// Exit codes: 0 success, 1 usage error, 2 validation/prerequisite error,
// 3 runtime failure (e.g. training aborted on a non-finite loss).

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mmtod/data.hpp"
#include "mmtod/eval.hpp"
#include "mmtod/trainer.hpp"
#include "mmtod/translator.hpp"

using namespace mmtod;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError : std::runtime_error {
  int code;
  CliError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

CliError validation_error(const std::string& msg) { return CliError(2, msg); }

// Deterministic mode is on unless MMTOD_DETERMINISTIC=0. In deterministic
// mode an unset --seed stays 0; otherwise it is drawn from the OS.
bool deterministic_mode() {
  const char* v = std::getenv("MMTOD_DETERMINISTIC");
  return v == nullptr || std::string(v) != "0";
}

uint64_t resolve_seed(const CLI::App& cmd, uint64_t seed) {
  if (cmd.count("--seed") == 0 && !deterministic_mode())
    return std::random_device{}();
  return seed;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw validation_error("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  out << text;
  if (!out.good()) throw CliError(3, "cannot write file: " + path);
}

void require_checkpoint(const std::string& path, const std::string& stage,
                        const std::string& hint) {
  if (!fs::exists(path))
    throw validation_error("missing " + stage + " checkpoint: " + path + "; " + hint);
}

DatasetManifest corpus_manifest(const std::string& data_dir, const std::string& name) {
  fs::path p = fs::path(data_dir) / name / "manifest.json";
  if (!fs::exists(p))
    throw validation_error("manifest not found: " + p.string() +
                           " (expected a corpus directory produced by `mmtod synth`)");
  return load_manifest(p.string());
}

std::vector<Tensor> manifest_pixels(const DatasetManifest& m) {
  std::vector<Tensor> out;
  out.reserve(m.images.size());
  for (size_t i = 0; i < m.images.size(); ++i) out.push_back(load_sample(m, i).pixels);
  return out;
}

// A manifest saved outside its corpus directory keeps working because the
// file fields are rewritten to absolute paths.
void save_manifest_absolute(DatasetManifest m, const std::string& path) {
  for (auto& rec : m.images) rec.file = (fs::path(m.root) / rec.file).string();
  save_manifest(m, path);
}

void check_train_test_disjoint(const DatasetManifest& train, const DatasetManifest& test) {
  std::vector<std::string> a, b;
  for (const auto& r : train.images) a.push_back(r.id);
  for (const auto& r : test.images) b.push_back(r.id);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::string> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  if (!both.empty())
    throw validation_error("train/test manifests share image ids (e.g. " + both[0] + ")");
}

std::map<std::string, double> report_row(const EvalReport& rep) {
  std::map<std::string, double> row;
  for (const auto& [cls, ce] : rep.per_class) row[cls] = 100.0 * ce.ap;
  row["mAP"] = 100.0 * rep.map;
  return row;
}

// ---- synth ----

int cmd_synth(const std::string& out_dir, SynthConfig cfg, bool force) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
    throw validation_error("output directory " + out_dir +
                           " is not empty; pass --force to overwrite");
  SynthResult r = synth_generate(cfg);
  write_corpus(r.thermal_train, (fs::path(out_dir) / "thermal_train").string());
  write_corpus(r.thermal_test, (fs::path(out_dir) / "thermal_test").string());
  write_corpus(r.rgb, (fs::path(out_dir) / "rgb").string());
  write_stats_csv({{"thermal_train", &r.thermal_train.manifest},
                   {"thermal_test", &r.thermal_test.manifest},
                   {"rgb", &r.rgb.manifest}},
                  (fs::path(out_dir) / "stats.csv").string());
  json j{{"n_thermal_train", cfg.n_thermal_train}, {"n_thermal_test", cfg.n_thermal_test},
         {"n_rgb", cfg.n_rgb},                     {"image_size", cfg.image_size},
         {"min_objects", cfg.min_objects},         {"max_objects", cfg.max_objects},
         {"thermal_noise", cfg.thermal_noise},     {"seed", cfg.seed}};
  spit((fs::path(out_dir) / "synth_config.json").string(), j.dump(2) + "\n");
  std::cout << "wrote corpus to " << out_dir << " (" << r.thermal_train.manifest.images.size()
            << " thermal train, " << r.thermal_test.manifest.images.size()
            << " thermal test, " << r.rgb.manifest.images.size() << " rgb)\n";
  return 0;
}

// ---- train-translator ----

int cmd_train_translator(const std::string& data_dir, const std::string& out_dir,
                         const TranslatorTrainConfig& cfg) {
  DatasetManifest mt = corpus_manifest(data_dir, "thermal_train");
  DatasetManifest mr = corpus_manifest(data_dir, "rgb");
  if (mt.images.empty() || mr.images.empty())
    throw validation_error("translator training needs non-empty thermal and rgb corpora");
  std::vector<Tensor> ct = manifest_pixels(mt);
  std::vector<Tensor> cr = manifest_pixels(mr);
  spit((fs::path(out_dir) / "translator_config.json").string(), cfg.to_json() + "\n");
  Rng init(cfg.seed);
  TranslatorPair pair = make_translator(cfg, init);
  train_translator(pair, ct, cr, cfg, out_dir);
  save_translator(pair, cfg, cfg.epochs_constant + cfg.epochs_decay,
                  (fs::path(out_dir) / "translator.ck").string());
  std::cout << "translator run complete: " << out_dir << "\n";
  return 0;
}

// ---- train-baseline / train-rgb / train-mmtod ----

void finish_training(TrainRun& run, const DatasetManifest& train_set,
                     const std::string& out_dir) {
  spit((fs::path(out_dir) / "train_config.json").string(), run.cfg.to_json() + "\n");
  save_manifest_absolute(train_set, (fs::path(out_dir) / "train_manifest.json").string());
  try {
    run_training(run, train_set, out_dir);
  } catch (const CliError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw validation_error(e.what());
  } catch (const std::exception& e) {
    throw CliError(3, e.what());
  }
  Generator* gen = run.has_translator ? run.translator->g_t2r.get() : nullptr;
  const TranslatorTrainConfig* tcfg = run.has_translator ? &run.translator_cfg : nullptr;
  save_detector(*run.model, gen, tcfg, run.cfg,
                (fs::path(out_dir) / "detector.ck").string());
  std::cout << "training run complete: " << out_dir << " (config hash " << run.cfg.hash()
            << ")\n";
}

DatasetManifest resolve_train_manifest(const std::string& manifest_path,
                                       const std::string& data_dir,
                                       const std::string& subdir) {
  if (!manifest_path.empty()) return load_manifest(manifest_path);
  if (data_dir.empty()) throw validation_error("give --manifest or --data");
  return corpus_manifest(data_dir, subdir);
}

int cmd_train_branch(const std::string& data_dir, const std::string& manifest_path,
                     const std::string& out_dir, const TrainerConfig& cfg,
                     BranchKind branch) {
  DatasetManifest m = resolve_train_manifest(
      manifest_path, data_dir, branch == BranchKind::kThermal ? "thermal_train" : "rgb");
  TrainRun run = make_pretrain_run(cfg, branch);
  finish_training(run, m, out_dir);
  return 0;
}

int cmd_train_mmtod(const std::string& data_dir, const std::string& manifest_path,
                    const std::string& out_dir, const TrainerConfig& cfg,
                    const std::string& thermal_ck, const std::string& rgb_ck,
                    const std::string& translator_ck) {
  require_checkpoint(translator_ck, "translator", "train translator first");
  require_checkpoint(thermal_ck, "thermal baseline", "train baseline first");
  require_checkpoint(rgb_ck, "rgb branch", "train rgb first");
  DatasetManifest m = resolve_train_manifest(manifest_path, data_dir, "thermal_train");
  TrainRun run = make_mmtod_run(cfg, thermal_ck, rgb_ck, translator_ck);
  finish_training(run, m, out_dir);
  return 0;
}

// ---- detect / eval ----

DatasetManifest resolve_test_manifest(const std::string& manifest_path,
                                      const std::string& data_dir) {
  if (!manifest_path.empty()) return load_manifest(manifest_path);
  if (!data_dir.empty()) return corpus_manifest(data_dir, "thermal_test");
  throw validation_error("give --manifest or --data");
}

std::vector<Detection> run_detect(const std::string& ck_path, const DatasetManifest& m,
                                  const DetectConfig& dcfg, double* latency) {
  require_checkpoint(ck_path, "detector", "train a detector first");
  DetectorBundle bundle = load_detector(ck_path);
  std::vector<ImageSample> samples = load_all_samples(m);
  return detect_all(*bundle.model, bundle.t2r.get(), samples, m, dcfg, latency);
}

int cmd_detect(const std::string& ck_path, const std::string& manifest_path,
               const std::string& data_dir, const std::string& out_csv,
               const DetectConfig& dcfg) {
  DatasetManifest m = resolve_test_manifest(manifest_path, data_dir);
  double latency = 0;
  std::vector<Detection> dets = run_detect(ck_path, m, dcfg, &latency);
  fs::create_directories(fs::path(out_csv).parent_path());
  write_detections_csv(dets, out_csv);
  std::cout << dets.size() << " detections over " << m.images.size() << " images, mean "
            << latency << " s/image -> " << out_csv << "\n";
  return 0;
}

void write_eval_outputs(const EvalReport& rep, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_report_csv(rep, (fs::path(out_dir) / "report.csv").string());
  write_report_json(rep, (fs::path(out_dir) / "report.json").string());
  write_pr_curves_csv(rep, out_dir);
  write_missed_csv(rep, (fs::path(out_dir) / "missed.csv").string());
}

int cmd_eval(const std::string& det_csv, const std::string& ck_path,
             const std::string& baseline_ck, const std::string& manifest_path,
             const std::string& data_dir, const std::string& out_dir, double iou,
             bool voc2007, const DetectConfig& dcfg) {
  DatasetManifest m = resolve_test_manifest(manifest_path, data_dir);
  std::vector<Detection> dets;
  double latency = 0;
  bool have_latency = false;
  if (!det_csv.empty()) {
    dets = read_detections_csv(det_csv);
  } else if (!ck_path.empty()) {
    dets = run_detect(ck_path, m, dcfg, &latency);
    have_latency = true;
  } else {
    throw validation_error("give --detections or --checkpoint");
  }
  for (const auto& d : dets)
    if (m.class_index(d.class_name) < 0)
      throw validation_error("detection class '" + d.class_name +
                             "' is not in the manifest class set");
  EvalReport rep;
  try {
    rep = evaluate(dets, m, iou, voc2007);
  } catch (const std::exception& e) {
    throw validation_error(e.what());
  }
  write_eval_outputs(rep, out_dir);

  std::ostringstream summary;
  summary << "mAP " << 100.0 * rep.map << " over " << rep.per_class.size() << " classes";
  if (have_latency) summary << "; mean detect latency " << latency << " s/image";
  if (!baseline_ck.empty()) {
    double base_latency = 0;
    std::vector<Detection> base_dets = run_detect(baseline_ck, m, dcfg, &base_latency);
    EvalReport base_rep = evaluate(base_dets, m, iou, voc2007);
    write_comparison_csv({{"baseline", report_row(base_rep)}, {"mmtod", report_row(rep)}},
                         m.classes, (fs::path(out_dir) / "comparison.csv").string());
    if (have_latency && base_latency > 0) {
      double ratio = latency / base_latency;
      summary << "; latency ratio vs baseline " << ratio;
      json j{{"mmtod_latency_sec", latency},
             {"baseline_latency_sec", base_latency},
             {"ratio", ratio}};
      spit((fs::path(out_dir) / "latency.json").string(), j.dump(2) + "\n");
    }
  }
  std::cout << summary.str() << " -> " << out_dir << "\n";
  return 0;
}

// ---- ablate ----

struct AblateRow {
  std::string axis_value;
  std::string method;
  std::vector<double> maps;  // one per seed, percent
  std::map<std::string, std::vector<double>> per_class;
};

void write_ablation_csv(const std::vector<AblateRow>& rows,
                        const std::vector<std::string>& classes, const std::string& path) {
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  auto spread = [&](const std::vector<double>& v) {
    double m = mean(v), s = 0;
    for (double x : v) s = std::max(s, std::abs(x - m));
    return s;
  };
  std::ofstream out(path);
  out << "axis_value,method,seeds";
  for (const auto& c : classes) out << "," << c;
  out << ",mAP_mean,mAP_spread\n";
  for (const auto& r : rows) {
    out << r.axis_value << "," << r.method << "," << r.maps.size();
    for (const auto& c : classes) {
      auto it = r.per_class.find(c);
      out << "," << (it == r.per_class.end() ? 0.0 : mean(it->second));
    }
    out << "," << mean(r.maps) << "," << spread(r.maps) << "\n";
  }
}

int cmd_ablate(const std::string& data_dir, const std::string& out_dir,
               const TrainerConfig& base_cfg, const std::string& rgb_ck,
               const std::string& translator_ck, std::vector<double> fractions,
               std::vector<int> resolutions, std::vector<uint64_t> seeds) {
  require_checkpoint(translator_ck, "translator", "train translator first");
  require_checkpoint(rgb_ck, "rgb branch", "train rgb first");
  DatasetManifest full_train = corpus_manifest(data_dir, "thermal_train");
  DatasetManifest test = corpus_manifest(data_dir, "thermal_test");
  check_train_test_disjoint(full_train, test);
  fs::create_directories(out_dir);

  std::vector<std::string> failures;
  auto train_pair_and_eval =
      [&](const DatasetManifest& train_set, const DatasetManifest& test_set,
          const std::string& tag, uint64_t seed, std::vector<AblateRow>& rows,
          size_t row_base) {
        check_train_test_disjoint(train_set, test_set);
        TrainerConfig cfg = base_cfg;
        cfg.seed = seed;
        fs::path run_dir = fs::path(out_dir) / (tag + "_seed" + std::to_string(seed));
        try {
          TrainRun base = make_pretrain_run(cfg, BranchKind::kThermal);
          run_training(base, train_set, (run_dir / "baseline").string());
          std::string base_ck = (run_dir / "baseline" / "detector.ck").string();
          save_detector(*base.model, nullptr, nullptr, cfg, base_ck);

          TrainRun mm = make_mmtod_run(cfg, base_ck, rgb_ck, translator_ck);
          run_training(mm, train_set, (run_dir / "mmtod").string());

          std::vector<ImageSample> test_samples = load_all_samples(test_set);
          DetectConfig dcfg;
          auto record = [&](DetectorModel& model, Generator* gen, size_t row) {
            auto dets = detect_all(model, gen, test_samples, test_set, dcfg, nullptr);
            EvalReport rep = evaluate(dets, test_set);
            rows[row].maps.push_back(100.0 * rep.map);
            for (const auto& [cls, ce] : rep.per_class)
              rows[row].per_class[cls].push_back(100.0 * ce.ap);
          };
          record(*base.model, nullptr, row_base);
          record(*mm.model, mm.translator->g_t2r.get(), row_base + 1);
        } catch (const std::exception& e) {
          failures.push_back(tag + " seed " + std::to_string(seed) + ": " + e.what());
        }
      };

  if (!fractions.empty()) {
    std::vector<AblateRow> rows;
    for (double f : fractions) {
      std::string tag = "fraction_" + std::to_string(f);
      rows.push_back({tag, "baseline", {}, {}});
      rows.push_back({tag, "mmtod", {}, {}});
    }
    for (size_t fi = 0; fi < fractions.size(); ++fi) {
      DatasetManifest split = make_split(full_train, fractions[fi], base_cfg.seed);
      save_manifest_absolute(
          split, (fs::path(out_dir) / ("split_" + std::to_string(fractions[fi]) + ".json"))
                     .string());
      for (uint64_t s : seeds)
        train_pair_and_eval(split, test, rows[2 * fi].axis_value, s, rows, 2 * fi);
    }
    write_ablation_csv(rows, test.classes, (fs::path(out_dir) / "fraction.csv").string());
  }

  if (!resolutions.empty()) {
    std::vector<AblateRow> rows;
    for (int r : resolutions) {
      std::string tag = "resolution_" + std::to_string(r);
      rows.push_back({tag, "baseline", {}, {}});
      rows.push_back({tag, "mmtod", {}, {}});
    }
    for (size_t ri = 0; ri < resolutions.size(); ++ri) {
      int r = resolutions[ri];
      fs::path res_dir = fs::path(out_dir) / ("res_" + std::to_string(r));
      ResampleResult rt = resample(full_train, r, r, (res_dir / "train").string());
      ResampleResult re = resample(test, r, r, (res_dir / "test").string());
      for (uint64_t s : seeds)
        train_pair_and_eval(rt.manifest, re.manifest, rows[2 * ri].axis_value, s, rows,
                            2 * ri);
    }
    write_ablation_csv(rows, test.classes, (fs::path(out_dir) / "resolution.csv").string());
  }

  if (!failures.empty()) {
    std::ofstream f((fs::path(out_dir) / "failures.txt").string());
    for (const auto& line : failures) f << line << "\n";
    throw CliError(3, std::to_string(failures.size()) +
                          " ablation sub-run(s) failed; partial results in " + out_dir);
  }
  std::cout << "ablation complete: " << out_dir << "\n";
  return 0;
}

// ---- report ----

int cmd_report(const std::string& manifest_path, const std::string& data_dir,
               const std::vector<std::string>& methods, const std::string& out_csv) {
  DatasetManifest m = resolve_test_manifest(manifest_path, data_dir);
  std::vector<std::pair<std::string, std::map<std::string, double>>> rows;
  for (const auto& spec : methods) {
    size_t eq = spec.find('=');
    if (eq == std::string::npos)
      throw validation_error("--method expects name=detections.csv, got: " + spec);
    std::string name = spec.substr(0, eq), path = spec.substr(eq + 1);
    EvalReport rep = evaluate(read_detections_csv(path), m);
    rows.emplace_back(name, report_row(rep));
  }
  fs::create_directories(fs::path(out_csv).parent_path());
  write_comparison_csv(rows, m.classes, out_csv);
  std::cout << "wrote " << rows.size() << " method rows -> " << out_csv << "\n";
  return 0;
}

// ---- option plumbing ----

void add_trainer_options(CLI::App* cmd, TrainerConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "full trainer config JSON (as written to run dirs)");
  cmd->add_option("--seed", cfg.seed, "training seed");
  cmd->add_option("--epochs", cfg.epochs, "training epochs");
  cmd->add_option("--lr", cfg.lr, "learning rate");
  cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
  cmd->add_option("--lr-decay-epoch", cfg.lr_decay_epoch, "epoch of the one-step lr decay");
  cmd->add_option("--lr-decay-factor", cfg.lr_decay_factor, "lr decay factor");
  cmd->add_option("--generator-lr-scale", cfg.generator_lr_scale,
                  "joint phase: generator lr = lr * scale");
  cmd->add_flag("--no-flip", [&cfg](int64_t) { cfg.horizontal_flip = false; },
                "disable horizontal flip augmentation");
}

// --config (a full snapshot) is applied first, then explicit flags override.
TrainerConfig resolve_trainer_config(const CLI::App& cmd, const TrainerConfig& flags,
                                     const std::string& config_path) {
  if (config_path.empty()) return flags;
  TrainerConfig cfg = TrainerConfig::from_json(slurp(config_path));
  if (cmd.count("--seed")) cfg.seed = flags.seed;
  if (cmd.count("--epochs")) cfg.epochs = flags.epochs;
  if (cmd.count("--lr")) cfg.lr = flags.lr;
  if (cmd.count("--momentum")) cfg.momentum = flags.momentum;
  if (cmd.count("--lr-decay-epoch")) cfg.lr_decay_epoch = flags.lr_decay_epoch;
  if (cmd.count("--lr-decay-factor")) cfg.lr_decay_factor = flags.lr_decay_factor;
  if (cmd.count("--generator-lr-scale")) cfg.generator_lr_scale = flags.generator_lr_scale;
  if (cmd.count("--no-flip")) cfg.horizontal_flip = false;
  return cfg;
}

void add_detect_options(CLI::App* cmd, DetectConfig& dcfg) {
  cmd->add_option("--score-thresh", dcfg.score_thresh, "minimum detection score");
  cmd->add_option("--nms-thresh", dcfg.final_nms_thresh, "final NMS IoU threshold");
  cmd->add_option("--max-dets", dcfg.max_dets, "max detections per image");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmtod: pseudo multi-modal thermal object detection toolkit"};
  app.require_subcommand(1);
  bool error_json = false;
  app.add_flag("--error-json", error_json, "emit errors as JSON on stderr");

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic cross-spectral corpus");
  std::string synth_out;
  SynthConfig scfg;
  bool force = false;
  synth->add_option("--out", synth_out, "output corpus directory")->required();
  synth->add_option("--seed", scfg.seed, "corpus seed");
  synth->add_option("--n-thermal-train", scfg.n_thermal_train, "thermal training images");
  synth->add_option("--n-thermal-test", scfg.n_thermal_test, "thermal test images");
  synth->add_option("--n-rgb", scfg.n_rgb, "rgb images");
  synth->add_option("--image-size", scfg.image_size, "square image size");
  synth->add_option("--min-objects", scfg.min_objects, "min objects per image");
  synth->add_option("--max-objects", scfg.max_objects, "max objects per image");
  synth->add_option("--noise", scfg.thermal_noise, "thermal noise sigma");
  synth->add_flag("--force", force, "overwrite a non-empty output directory");

  // train-translator
  auto* ttr = app.add_subcommand("train-translator", "train the thermal<->rgb translator");
  std::string ttr_data, ttr_out, ttr_config;
  TranslatorTrainConfig tcfg;
  ttr->add_option("--data", ttr_data, "corpus directory")->required();
  ttr->add_option("--out", ttr_out, "run directory")->required();
  ttr->add_option("--config", ttr_config, "full translator config JSON");
  ttr->add_option("--seed", tcfg.seed, "seed");
  ttr->add_option("--epochs-constant", tcfg.epochs_constant, "epochs at constant lr");
  ttr->add_option("--epochs-decay", tcfg.epochs_decay, "epochs of linear lr decay");
  ttr->add_option("--lr", tcfg.lr_initial, "initial learning rate");
  ttr->add_option("--base-channels", tcfg.base_channels, "generator base channels");
  ttr->add_option("--n-res-blocks", tcfg.n_res_blocks, "generator residual blocks");
  ttr->add_option("--image-size", tcfg.image_size, "training crop size");
  ttr->add_option("--pool-size", tcfg.pool_size, "image pool capacity");

  // train-baseline / train-rgb / train-mmtod
  TrainerConfig trainer_flags;
  std::string tb_data, tb_manifest, tb_out, tb_config;
  auto* tb = app.add_subcommand("train-baseline", "train the thermal-only baseline");
  tb->add_option("--data", tb_data, "corpus directory");
  tb->add_option("--manifest", tb_manifest, "explicit training manifest JSON");
  tb->add_option("--out", tb_out, "run directory")->required();
  add_trainer_options(tb, trainer_flags, tb_config);

  TrainerConfig rgb_flags;
  std::string tr_data, tr_manifest, tr_out, tr_config;
  auto* tr = app.add_subcommand("train-rgb", "pre-train the rgb branch");
  tr->add_option("--data", tr_data, "corpus directory");
  tr->add_option("--manifest", tr_manifest, "explicit training manifest JSON");
  tr->add_option("--out", tr_out, "run directory")->required();
  add_trainer_options(tr, rgb_flags, tr_config);

  TrainerConfig mm_flags;
  std::string mm_data, mm_manifest, mm_out, mm_config, mm_thermal, mm_rgb, mm_translator;
  auto* tm = app.add_subcommand("train-mmtod", "jointly train the multimodal detector");
  tm->add_option("--data", mm_data, "corpus directory");
  tm->add_option("--manifest", mm_manifest, "explicit training manifest JSON");
  tm->add_option("--out", mm_out, "run directory")->required();
  tm->add_option("--thermal-ck", mm_thermal, "thermal baseline detector checkpoint")
      ->required();
  tm->add_option("--rgb-ck", mm_rgb, "rgb branch detector checkpoint")->required();
  tm->add_option("--translator-ck", mm_translator, "translator checkpoint")->required();
  add_trainer_options(tm, mm_flags, mm_config);

  // detect
  auto* det = app.add_subcommand("detect", "run a detector over a manifest");
  std::string det_ck, det_manifest, det_data, det_out;
  DetectConfig det_cfg;
  det->add_option("--checkpoint", det_ck, "detector checkpoint")->required();
  det->add_option("--manifest", det_manifest, "manifest JSON");
  det->add_option("--data", det_data, "corpus directory (uses thermal_test)");
  det->add_option("--out", det_out, "detections CSV path")->required();
  add_detect_options(det, det_cfg);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate detections or a checkpoint");
  std::string ev_dets, ev_ck, ev_base_ck, ev_manifest, ev_data, ev_out;
  double ev_iou = 0.5;
  bool ev_voc = false;
  DetectConfig ev_cfg;
  ev->add_option("--detections", ev_dets, "detections CSV");
  ev->add_option("--checkpoint", ev_ck, "detector checkpoint (runs detect)");
  ev->add_option("--baseline-checkpoint", ev_base_ck,
                 "baseline checkpoint for comparison + latency ratio");
  ev->add_option("--manifest", ev_manifest, "manifest JSON");
  ev->add_option("--data", ev_data, "corpus directory (uses thermal_test)");
  ev->add_option("--out", ev_out, "report output directory")->required();
  ev->add_option("--iou", ev_iou, "matching IoU threshold");
  ev->add_flag("--voc2007", ev_voc, "use 11-point interpolated AP");
  add_detect_options(ev, ev_cfg);

  // ablate
  auto* ab = app.add_subcommand("ablate", "train/eval over data fraction and resolution axes");
  TrainerConfig ab_flags;
  std::string ab_data, ab_out, ab_config, ab_rgb, ab_translator;
  std::vector<double> ab_fractions;
  std::vector<int> ab_resolutions;
  std::vector<uint64_t> ab_seeds{0, 1, 2};
  ab->add_option("--data", ab_data, "corpus directory")->required();
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--rgb-ck", ab_rgb, "rgb branch detector checkpoint")->required();
  ab->add_option("--translator-ck", ab_translator, "translator checkpoint")->required();
  ab->add_option("--fractions", ab_fractions, "training-set fractions, e.g. 1 0.5 0.25");
  ab->add_option("--resolutions", ab_resolutions, "square resolutions, e.g. 64 32");
  ab->add_option("--seeds", ab_seeds, "seeds to repeat over");
  add_trainer_options(ab, ab_flags, ab_config);

  // report
  auto* rp = app.add_subcommand("report", "consolidate detections files into a comparison table");
  std::string rp_manifest, rp_data, rp_out;
  std::vector<std::string> rp_methods;
  rp->add_option("--manifest", rp_manifest, "manifest JSON");
  rp->add_option("--data", rp_data, "corpus directory (uses thermal_test)");
  rp->add_option("--method", rp_methods, "name=detections.csv (repeatable)")->required();
  rp->add_option("--out", rp_out, "comparison CSV path")->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();
  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      scfg.seed = resolve_seed(*synth, scfg.seed);
      return cmd_synth(synth_out, scfg, force);
    }
    if (*ttr) {
      TranslatorTrainConfig cfg = tcfg;
      if (!ttr_config.empty()) {
        cfg = TranslatorTrainConfig::from_json(slurp(ttr_config));
        if (ttr->count("--seed")) cfg.seed = tcfg.seed;
        if (ttr->count("--epochs-constant")) cfg.epochs_constant = tcfg.epochs_constant;
        if (ttr->count("--epochs-decay")) cfg.epochs_decay = tcfg.epochs_decay;
        if (ttr->count("--lr")) cfg.lr_initial = tcfg.lr_initial;
        if (ttr->count("--base-channels")) cfg.base_channels = tcfg.base_channels;
        if (ttr->count("--n-res-blocks")) cfg.n_res_blocks = tcfg.n_res_blocks;
        if (ttr->count("--image-size")) cfg.image_size = tcfg.image_size;
        if (ttr->count("--pool-size")) cfg.pool_size = tcfg.pool_size;
      }
      cfg.seed = resolve_seed(*ttr, cfg.seed);
      return cmd_train_translator(ttr_data, ttr_out, cfg);
    }
    if (*tb) {
      TrainerConfig cfg = resolve_trainer_config(*tb, trainer_flags, tb_config);
      cfg.seed = resolve_seed(*tb, cfg.seed);
      return cmd_train_branch(tb_data, tb_manifest, tb_out, cfg, BranchKind::kThermal);
    }
    if (*tr) {
      TrainerConfig cfg = resolve_trainer_config(*tr, rgb_flags, tr_config);
      cfg.seed = resolve_seed(*tr, cfg.seed);
      return cmd_train_branch(tr_data, tr_manifest, tr_out, cfg, BranchKind::kRgb);
    }
    if (*tm) {
      TrainerConfig cfg = resolve_trainer_config(*tm, mm_flags, mm_config);
      cfg.seed = resolve_seed(*tm, cfg.seed);
      return cmd_train_mmtod(mm_data, mm_manifest, mm_out, cfg, mm_thermal, mm_rgb, mm_translator);
    }
    if (*det) return cmd_detect(det_ck, det_manifest, det_data, det_out, det_cfg);
    if (*ev)
      return cmd_eval(ev_dets, ev_ck, ev_base_ck, ev_manifest, ev_data, ev_out, ev_iou,
                      ev_voc, ev_cfg);
    if (*ab) {
      TrainerConfig cfg = resolve_trainer_config(*ab, ab_flags, ab_config);
      cfg.seed = resolve_seed(*ab, cfg.seed);
      return cmd_ablate(ab_data, ab_out, cfg, ab_rgb, ab_translator, ab_fractions,
                        ab_resolutions, ab_seeds);
    }
    if (*rp) return cmd_report(rp_manifest, rp_data, rp_methods, rp_out);
  } catch (const CliError& e) {
    if (error_json)
      std::cerr << json{{"error", e.what()}, {"code", e.code}}.dump() << "\n";
    else
      std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const std::exception& e) {
    if (error_json)
      std::cerr << json{{"error", e.what()}, {"code", 3}}.dump() << "\n";
    else
      std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

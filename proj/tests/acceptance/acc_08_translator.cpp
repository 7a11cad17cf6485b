// Translator health after the full schedule (20 constant + 20 decay epochs at
// lr 1e-5): both cycle losses fall below 50% of their epoch-1 values, and the
// translate output shape/range invariants hold on every test image.
//
// argv: <artifacts-dir>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "acc_common.hpp"
#include "mmtod/data.hpp"
#include "mmtod/translator.hpp"

namespace fs = std::filesystem;
using namespace mmtod;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acc_08_translator <artifacts-dir>\n");
    return 2;
  }
  fs::path root = argv[1];
  std::ostringstream detail;
  int failures = 0;

  // loss curve: epoch,adv_g,adv_d,cycle_t,cycle_r
  std::ifstream csv((root / "translator/translator_losses.csv").string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() == 5) rows.push_back(row);
  }
  if (rows.size() < 2) {
    ++failures;
    detail << "loss CSV missing/short (" << rows.size() << " rows); ";
  } else {
    double ct0 = rows.front()[3], cr0 = rows.front()[4];
    double ct1 = rows.back()[3], cr1 = rows.back()[4];
    detail << "cycle_t " << ct0 << " -> " << ct1 << ", cycle_r " << cr0 << " -> " << cr1
           << " over " << rows.size() << " epochs; ";
    if (!(ct1 < 0.5 * ct0 && cr1 < 0.5 * cr0)) {
      ++failures;
      detail << "halving gate missed; ";
    }
  }

  // invariants on every test image
  TranslatorPair pair = load_translator((root / "translator/translator.ck").string());
  DatasetManifest test =
      load_manifest((root / "corpus/thermal_test/manifest.json").string());
  int bad = 0;
  for (size_t i = 0; i < test.images.size(); ++i) {
    ImageSample s = load_sample(test, i);
    Tensor out = translate(*pair.g_t2r, s.pixels);
    if (out.ndim() != 3 || out.dim(0) != 3 || out.dim(1) != s.pixels.dim(1) ||
        out.dim(2) != s.pixels.dim(2)) {
      ++bad;
      continue;
    }
    for (size_t j = 0; j < out.numel(); ++j)
      if (!(out[j] >= 0.0 && out[j] <= 1.0)) {
        ++bad;
        break;
      }
  }
  detail << "invariants on " << test.images.size() << " test images, " << bad << " bad";
  if (bad) ++failures;

  return finish_criterion(8, "translator health", failures == 0, detail.str());
}

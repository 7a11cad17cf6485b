#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmtod/losses.hpp"
#include "mmtod/nn.hpp"
#include "mmtod/rng.hpp"

namespace mmtod {

// Encoder / residual trunk / decoder image-to-image generator. Downsampling
// factor is 4 (two stride-2 stages); output activation is bounded to [0,1].
class Generator {
 public:
  Generator(int in_channels, int out_channels, int base_channels, int n_res_blocks,
            Rng& rng);

  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }
  static constexpr int kDownsampleFactor = 4;

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  ParamList params(const std::string& prefix);

 private:
  int in_c_, out_c_;
  Sequential net_;
};

// Small patch classifier; linear (unbounded) per-patch outputs for the
// least-squares GAN loss.
class PatchDiscriminator {
 public:
  PatchDiscriminator(int in_channels, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  ParamList params(const std::string& prefix);

 private:
  Sequential net_;
};

struct TranslatorPair {
  std::unique_ptr<Generator> g_t2r;          // 1xHxW -> 3xHxW
  std::unique_ptr<Generator> g_r2t;          // 3xHxW -> 1xHxW
  std::unique_ptr<PatchDiscriminator> d_rgb;
  std::unique_ptr<PatchDiscriminator> d_thermal;

  ParamList generator_params();
  ParamList discriminator_params();
  ParamList all_params();
};

struct TranslatorTrainConfig {
  double lr_initial = 1e-5;
  int epochs_constant = 20;
  int epochs_decay = 20;
  int batch_size = 1;
  int image_size = 64;
  uint64_t seed = 0;
  GanLossConfig gan;
  int pool_size = 16;
  int base_channels = 5;
  int n_res_blocks = 3;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;

  std::string to_json() const;
  static TranslatorTrainConfig from_json(const std::string& s);
  uint64_t hash() const;
};

TranslatorPair make_translator(const TranslatorTrainConfig& cfg, Rng& rng);

// Single-image thermal -> pseudo-RGB inference. Validates channel count and
// that H and W are multiples of the generator's downsampling factor
// (the error names the required padding).
Tensor translate(Generator& t2r, const Tensor& thermal);

// History buffer of generated fakes used for discriminator updates.
class ImagePool {
 public:
  explicit ImagePool(int capacity) : capacity_(capacity) {}
  Tensor query(const Tensor& image, Rng& rng);

 private:
  int capacity_;
  std::vector<Tensor> pool_;
};

struct TranslatorLossRecord {
  double adv_g = 0, adv_d = 0, cycle_t = 0, cycle_r = 0;
  bool ok = true;
  std::string error;
};

struct TranslatorOptState {
  Adam opt_g{1e-5};
  Adam opt_d{1e-5};
  ImagePool pool_rgb{16};
  ImagePool pool_thermal{16};
};

// One generator update and one discriminator update on unpaired batches.
// Fakes handed to the discriminators are detached (taken through the image
// pool). A non-finite loss aborts the step, restoring pre-step parameters.
TranslatorLossRecord translator_train_step(TranslatorPair& pair,
                                           const std::vector<Tensor>& batch_thermal,
                                           const std::vector<Tensor>& batch_rgb,
                                           const TranslatorTrainConfig& cfg,
                                           TranslatorOptState& opt, Rng& rng);

struct TranslatorTrainResult {
  std::vector<TranslatorLossRecord> epoch_losses;
};

// Runs the full schedule: lr_initial for epochs_constant epochs, then linear
// decay to zero over epochs_decay. Writes per-epoch loss CSV and an
// end-of-epoch checkpoint when out_dir is non-empty.
TranslatorTrainResult train_translator(TranslatorPair& pair,
                                       const std::vector<Tensor>& corpus_thermal,
                                       const std::vector<Tensor>& corpus_rgb,
                                       const TranslatorTrainConfig& cfg,
                                       const std::string& out_dir = "");

void save_translator(TranslatorPair& pair, const TranslatorTrainConfig& cfg, int epoch,
                     const std::string& path);
// Rebuilds the pair from cfg stored in the checkpoint meta.
TranslatorPair load_translator(const std::string& path, TranslatorTrainConfig* cfg_out = nullptr);

}  // namespace mmtod

#include "mmtod/translator.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "mmtod/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mmtod {

Generator::Generator(int in_channels, int out_channels, int base_channels, int n_res_blocks,
                     Rng& rng)
    : in_c_(in_channels), out_c_(out_channels) {
  int f = base_channels;
  net_.add(std::make_unique<Conv2d>(in_channels, f, 3, 1, 1, rng));
  net_.add(std::make_unique<InstanceNorm2d>(f));
  net_.add(std::make_unique<ReLU>());
  net_.add(std::make_unique<Conv2d>(f, 2 * f, 3, 2, 1, rng));
  net_.add(std::make_unique<InstanceNorm2d>(2 * f));
  net_.add(std::make_unique<ReLU>());
  net_.add(std::make_unique<Conv2d>(2 * f, 4 * f, 3, 2, 1, rng));
  net_.add(std::make_unique<InstanceNorm2d>(4 * f));
  net_.add(std::make_unique<ReLU>());
  for (int i = 0; i < n_res_blocks; ++i)
    net_.add(std::make_unique<ResidualBlock>(4 * f, rng));
  net_.add(std::make_unique<Upsample2x>());
  net_.add(std::make_unique<Conv2d>(4 * f, 2 * f, 3, 1, 1, rng));
  net_.add(std::make_unique<InstanceNorm2d>(2 * f));
  net_.add(std::make_unique<ReLU>());
  net_.add(std::make_unique<Upsample2x>());
  net_.add(std::make_unique<Conv2d>(2 * f, f, 3, 1, 1, rng));
  net_.add(std::make_unique<InstanceNorm2d>(f));
  net_.add(std::make_unique<ReLU>());
  net_.add(std::make_unique<Conv2d>(f, out_channels, 3, 1, 1, rng));
  net_.add(std::make_unique<BoundedOutput>());
}

Tensor Generator::forward(const Tensor& x) { return net_.forward(x); }
Tensor Generator::backward(const Tensor& dy) { return net_.backward(dy); }

ParamList Generator::params(const std::string& prefix) {
  ParamList p;
  net_.collect_params(prefix, p);
  return p;
}

PatchDiscriminator::PatchDiscriminator(int in_channels, Rng& rng) {
  net_.add(std::make_unique<Conv2d>(in_channels, 16, 3, 2, 1, rng));
  net_.add(std::make_unique<LeakyReLU>(0.2));
  net_.add(std::make_unique<Conv2d>(16, 32, 3, 2, 1, rng));
  net_.add(std::make_unique<InstanceNorm2d>(32));
  net_.add(std::make_unique<LeakyReLU>(0.2));
  net_.add(std::make_unique<Conv2d>(32, 64, 3, 2, 1, rng));
  net_.add(std::make_unique<InstanceNorm2d>(64));
  net_.add(std::make_unique<LeakyReLU>(0.2));
  net_.add(std::make_unique<Conv2d>(64, 1, 1, 1, 0, rng));
}

Tensor PatchDiscriminator::forward(const Tensor& x) { return net_.forward(x); }
Tensor PatchDiscriminator::backward(const Tensor& dy) { return net_.backward(dy); }

ParamList PatchDiscriminator::params(const std::string& prefix) {
  ParamList p;
  net_.collect_params(prefix, p);
  return p;
}

ParamList TranslatorPair::generator_params() {
  ParamList p = g_t2r->params("g_t2r");
  for (auto* q : g_r2t->params("g_r2t")) p.push_back(q);
  return p;
}

ParamList TranslatorPair::discriminator_params() {
  ParamList p = d_rgb->params("d_rgb");
  for (auto* q : d_thermal->params("d_thermal")) p.push_back(q);
  return p;
}

ParamList TranslatorPair::all_params() {
  ParamList p = generator_params();
  for (auto* q : discriminator_params()) p.push_back(q);
  return p;
}

std::string TranslatorTrainConfig::to_json() const {
  json j;
  j["lr_initial"] = lr_initial;
  j["epochs_constant"] = epochs_constant;
  j["epochs_decay"] = epochs_decay;
  j["batch_size"] = batch_size;
  j["image_size"] = image_size;
  j["seed"] = seed;
  j["cycle_weight"] = gan.cycle_weight;
  j["identity_weight"] = gan.identity_weight;
  j["adversarial_form"] =
      gan.adversarial_form == AdversarialForm::kLeastSquares ? "least_squares" : "cross_entropy";
  j["pool_size"] = pool_size;
  j["base_channels"] = base_channels;
  j["n_res_blocks"] = n_res_blocks;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  return j.dump();
}

uint64_t TranslatorTrainConfig::hash() const { return hash_string(to_json()); }

TranslatorTrainConfig TranslatorTrainConfig::from_json(const std::string& s) {
  json j = json::parse(s);
  TranslatorTrainConfig c;
  c.lr_initial = j.at("lr_initial");
  c.epochs_constant = j.at("epochs_constant");
  c.epochs_decay = j.at("epochs_decay");
  c.batch_size = j.at("batch_size");
  c.image_size = j.at("image_size");
  c.seed = j.at("seed");
  c.gan.cycle_weight = j.at("cycle_weight");
  c.gan.identity_weight = j.at("identity_weight");
  c.gan.adversarial_form = j.at("adversarial_form") == "least_squares"
                               ? AdversarialForm::kLeastSquares
                               : AdversarialForm::kCrossEntropy;
  c.pool_size = j.at("pool_size");
  c.base_channels = j.at("base_channels");
  c.n_res_blocks = j.at("n_res_blocks");
  c.adam_beta1 = j.at("adam_beta1");
  c.adam_beta2 = j.at("adam_beta2");
  return c;
}

TranslatorPair make_translator(const TranslatorTrainConfig& cfg, Rng& rng) {
  TranslatorPair p;
  p.g_t2r = std::make_unique<Generator>(1, 3, cfg.base_channels, cfg.n_res_blocks, rng);
  p.g_r2t = std::make_unique<Generator>(3, 1, cfg.base_channels, cfg.n_res_blocks, rng);
  p.d_rgb = std::make_unique<PatchDiscriminator>(3, rng);
  p.d_thermal = std::make_unique<PatchDiscriminator>(1, rng);
  return p;
}

Tensor translate(Generator& t2r, const Tensor& thermal) {
  if (thermal.ndim() != 3 || thermal.dim(0) != t2r.in_channels())
    throw std::invalid_argument("translate: expected " +
                                std::to_string(t2r.in_channels()) + "-channel input");
  int f = Generator::kDownsampleFactor;
  int h = thermal.dim(1), w = thermal.dim(2);
  if (h % f != 0 || w % f != 0)
    throw std::invalid_argument(
        "translate: spatial dims must be multiples of " + std::to_string(f) + "; pad " +
        std::to_string(h) + "x" + std::to_string(w) + " to " +
        std::to_string((h + f - 1) / f * f) + "x" + std::to_string((w + f - 1) / f * f));
  return t2r.forward(thermal);
}

Tensor ImagePool::query(const Tensor& image, Rng& rng) {
  if (capacity_ <= 0) return image;
  if (static_cast<int>(pool_.size()) < capacity_) {
    pool_.push_back(image);
    return image;
  }
  if (rng.uniform() < 0.5) return image;
  int idx = rng.uniform_int(0, capacity_ - 1);
  Tensor out = pool_[static_cast<size_t>(idx)];
  pool_[static_cast<size_t>(idx)] = image;
  return out;
}

TranslatorLossRecord translator_train_step(TranslatorPair& pair,
                                           const std::vector<Tensor>& batch_thermal,
                                           const std::vector<Tensor>& batch_rgb,
                                           const TranslatorTrainConfig& cfg,
                                           TranslatorOptState& opt, Rng& rng) {
  TranslatorLossRecord rec;
  ParamList g_params = pair.generator_params();
  ParamList d_params = pair.discriminator_params();
  auto snapshot_g = snapshot_values(g_params);
  auto snapshot_d = snapshot_values(d_params);

  size_t n = std::min(batch_thermal.size(), batch_rgb.size());
  if (n == 0) throw std::invalid_argument("translator_train_step: empty batch");

  std::vector<Tensor> fakes_rgb, fakes_thermal;

  // ---- generator update ----
  zero_grads(g_params);
  for (size_t b = 0; b < n; ++b) {
    const Tensor& t = batch_thermal[b];
    const Tensor& r = batch_rgb[b];

    // thermal -> rgb -> thermal
    Tensor fake_rgb = pair.g_t2r->forward(t);
    zero_grads(d_params);
    Tensor d_out = pair.d_rgb->forward(fake_rgb);
    Tensor adv_grad;
    rec.adv_g += adversarial_loss(d_out, /*target_is_real=*/true, cfg.gan, &adv_grad);
    Tensor dfake = pair.d_rgb->backward(adv_grad);
    Tensor rec_t = pair.g_r2t->forward(fake_rgb);
    Tensor cyc_grad;
    rec.cycle_t += cycle_loss(t, rec_t, cfg.gan, &cyc_grad);
    dfake.add_scaled(pair.g_r2t->backward(cyc_grad), 1.0);
    pair.g_t2r->backward(dfake);
    fakes_rgb.push_back(std::move(fake_rgb));

    // rgb -> thermal -> rgb
    Tensor fake_t = pair.g_r2t->forward(r);
    Tensor d_out2 = pair.d_thermal->forward(fake_t);
    Tensor adv_grad2;
    rec.adv_g += adversarial_loss(d_out2, true, cfg.gan, &adv_grad2);
    Tensor dfake2 = pair.d_thermal->backward(adv_grad2);
    Tensor rec_r = pair.g_t2r->forward(fake_t);
    Tensor cyc_grad2;
    rec.cycle_r += cycle_loss(r, rec_r, cfg.gan, &cyc_grad2);
    dfake2.add_scaled(pair.g_t2r->backward(cyc_grad2), 1.0);
    pair.g_r2t->backward(dfake2);
    fakes_thermal.push_back(std::move(fake_t));

    // optional identity terms; only defined when a generator maps a domain
    // onto itself channel-wise (not the case for the 1<->3 channel pair)
    if (cfg.gan.identity_weight > 0 && pair.g_t2r->in_channels() == r.dim(0)) {
      GanLossConfig idw = cfg.gan;
      idw.cycle_weight = cfg.gan.identity_weight;
      Tensor id_rgb = pair.g_t2r->forward(r);
      Tensor idg;
      cycle_loss(r, id_rgb, idw, &idg);
      pair.g_t2r->backward(idg);
    }
  }
  double inv_n = 1.0 / static_cast<double>(n);
  rec.adv_g *= 0.5 * inv_n;
  rec.cycle_t *= inv_n;
  rec.cycle_r *= inv_n;

  // ---- discriminator update (detached fakes through the pool) ----
  zero_grads(d_params);
  for (size_t b = 0; b < n; ++b) {
    auto d_side = [&](PatchDiscriminator& d, const Tensor& real, const Tensor& fake) {
      Tensor out_r = d.forward(real);
      Tensor gr;
      double l = adversarial_loss(out_r, true, cfg.gan, &gr);
      for (size_t i = 0; i < gr.numel(); ++i) gr[i] *= 0.5;
      d.backward(gr);
      Tensor out_f = d.forward(fake);
      Tensor gf;
      l += adversarial_loss(out_f, false, cfg.gan, &gf);
      for (size_t i = 0; i < gf.numel(); ++i) gf[i] *= 0.5;
      d.backward(gf);
      return 0.5 * l;
    };
    rec.adv_d += d_side(*pair.d_rgb, batch_rgb[b], opt.pool_rgb.query(fakes_rgb[b], rng));
    rec.adv_d +=
        d_side(*pair.d_thermal, batch_thermal[b], opt.pool_thermal.query(fakes_thermal[b], rng));
  }
  rec.adv_d *= 0.5 * inv_n;

  bool finite = std::isfinite(rec.adv_g) && std::isfinite(rec.adv_d) &&
                std::isfinite(rec.cycle_t) && std::isfinite(rec.cycle_r);
  if (!finite) {
    restore_values(g_params, snapshot_g);
    restore_values(d_params, snapshot_d);
    rec.ok = false;
    rec.error = "non-finite loss; step aborted, parameters restored";
    return rec;
  }
  if (n > 1) {
    for (auto* p : g_params)
      for (size_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= inv_n;
    for (auto* p : d_params)
      for (size_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= inv_n;
  }
  opt.opt_g.step(g_params);
  opt.opt_d.step(d_params);
  if (!params_all_finite(g_params) || !params_all_finite(d_params)) {
    restore_values(g_params, snapshot_g);
    restore_values(d_params, snapshot_d);
    rec.ok = false;
    rec.error = "non-finite parameter after update; step aborted, parameters restored";
  }
  return rec;
}

TranslatorTrainResult train_translator(TranslatorPair& pair,
                                       const std::vector<Tensor>& corpus_thermal,
                                       const std::vector<Tensor>& corpus_rgb,
                                       const TranslatorTrainConfig& cfg,
                                       const std::string& out_dir) {
  if (corpus_thermal.empty() || corpus_rgb.empty())
    throw std::invalid_argument("train_translator: empty corpus");
  TranslatorTrainResult result;
  int total_epochs = cfg.epochs_constant + cfg.epochs_decay;
  Rng rng(cfg.seed);
  TranslatorOptState opt;
  opt.opt_g = Adam(cfg.lr_initial, cfg.adam_beta1, cfg.adam_beta2);
  opt.opt_d = Adam(cfg.lr_initial, cfg.adam_beta1, cfg.adam_beta2);
  opt.pool_rgb = ImagePool(cfg.pool_size);
  opt.pool_thermal = ImagePool(cfg.pool_size);

  std::ofstream csv;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    csv.open((fs::path(out_dir) / "translator_losses.csv").string());
    csv << "epoch,adv_g,adv_d,cycle_t,cycle_r\n";
  }

  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    double lr = cfg.lr_initial;
    if (epoch >= cfg.epochs_constant && cfg.epochs_decay > 0)
      lr = cfg.lr_initial *
           (1.0 - static_cast<double>(epoch - cfg.epochs_constant) / cfg.epochs_decay);
    opt.opt_g.set_lr(lr);
    opt.opt_d.set_lr(lr);

    std::vector<int> order = rng.permutation(static_cast<int>(corpus_thermal.size()));
    TranslatorLossRecord epoch_rec;
    int steps = 0;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.batch_size)) {
      std::vector<Tensor> bt, br;
      for (int b = 0; b < cfg.batch_size && i + static_cast<size_t>(b) < order.size(); ++b) {
        bt.push_back(corpus_thermal[static_cast<size_t>(order[i + static_cast<size_t>(b)])]);
        br.push_back(corpus_rgb[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(corpus_rgb.size()) - 1))]);
      }
      TranslatorLossRecord r = translator_train_step(pair, bt, br, cfg, opt, rng);
      if (r.ok) {
        epoch_rec.adv_g += r.adv_g;
        epoch_rec.adv_d += r.adv_d;
        epoch_rec.cycle_t += r.cycle_t;
        epoch_rec.cycle_r += r.cycle_r;
        ++steps;
      }
    }
    if (steps > 0) {
      epoch_rec.adv_g /= steps;
      epoch_rec.adv_d /= steps;
      epoch_rec.cycle_t /= steps;
      epoch_rec.cycle_r /= steps;
    }
    result.epoch_losses.push_back(epoch_rec);
    if (csv.is_open())
      csv << epoch << "," << epoch_rec.adv_g << "," << epoch_rec.adv_d << ","
          << epoch_rec.cycle_t << "," << epoch_rec.cycle_r << std::endl;
    if (!out_dir.empty())
      save_translator(pair, cfg, epoch,
                      (fs::path(out_dir) / "translator_last.ck").string());
  }
  return result;
}

void save_translator(TranslatorPair& pair, const TranslatorTrainConfig& cfg, int epoch,
                     const std::string& path) {
  Checkpoint ck;
  ck.kind = "translator";
  ck.config_hash = cfg.hash();
  ck.meta["config"] = cfg.to_json();
  ck.meta["epoch"] = epoch;
  pack_params(ck, "g_t2r", pair.g_t2r->params("g_t2r"));
  pack_params(ck, "g_r2t", pair.g_r2t->params("g_r2t"));
  pack_params(ck, "d_rgb", pair.d_rgb->params("d_rgb"));
  pack_params(ck, "d_thermal", pair.d_thermal->params("d_thermal"));
  save_checkpoint_file(ck, path);
}

TranslatorPair load_translator(const std::string& path, TranslatorTrainConfig* cfg_out) {
  Checkpoint ck = load_checkpoint_file(path, "translator");
  TranslatorTrainConfig cfg = TranslatorTrainConfig::from_json(ck.meta.at("config"));
  if (ck.config_hash != cfg.hash())
    throw std::runtime_error("load_translator: config hash mismatch in " + path);
  Rng rng(0);
  TranslatorPair pair = make_translator(cfg, rng);
  unpack_params(ck, "g_t2r", pair.g_t2r->params("g_t2r"));
  unpack_params(ck, "g_r2t", pair.g_r2t->params("g_r2t"));
  unpack_params(ck, "d_rgb", pair.d_rgb->params("d_rgb"));
  unpack_params(ck, "d_thermal", pair.d_thermal->params("d_thermal"));
  if (cfg_out) *cfg_out = cfg;
  return pair;
}

}  // namespace mmtod

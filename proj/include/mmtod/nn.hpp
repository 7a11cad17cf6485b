#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmtod/rng.hpp"
#include "mmtod/tensor.hpp"

namespace mmtod {

// A named learnable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  explicit Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor(value.shape());
  }
};

// Layers cache whatever the backward pass needs during forward. backward()
// accumulates into param grads and returns the gradient w.r.t. the input.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect_params(const std::string& prefix, std::vector<Param*>& out) {}
};

class Conv2d : public Layer {
 public:
  // weight [out_c, in_c*k*k], bias [out_c]; He-normal init.
  Conv2d(int in_c, int out_c, int kernel, int stride, int pad, Rng& rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<Param*>& out) override;

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }

 private:
  int in_c_, out_c_, k_, stride_, pad_;
  int in_h_ = 0, in_w_ = 0;  // cached input size
  Param weight_, bias_;
  Tensor cols_;  // cached im2col matrix [in_c*k*k, out_h*out_w]
};

class Linear : public Layer {
 public:
  Linear(int in_dim, int out_dim, Rng& rng);
  Tensor forward(const Tensor& x) override;  // x flattened to [in_dim]
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<Param*>& out) override;

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  int in_dim_, out_dim_;
  Param weight_, bias_;
  Tensor input_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor input_;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

 private:
  double slope_;
  Tensor input_;
};

// Per-channel normalization over the spatial dims with a learned affine
// (gamma, beta); statistics come from the current input, so behavior is the
// same in training and inference.
class InstanceNorm2d : public Layer {
 public:
  explicit InstanceNorm2d(int channels, double eps = 1e-5);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<Param*>& out) override;

  Param& gamma() { return gamma_; }
  Param& beta() { return beta_; }

 private:
  int channels_;
  double eps_;
  Param gamma_, beta_;
  Tensor xhat_;                  // cached normalized input
  std::vector<double> inv_std_;  // per channel
};

// tanh remapped to [0,1]: y = 0.5*(tanh(x)+1)
class BoundedOutput : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor output_;  // caches y
};

class Upsample2x : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

 private:
  std::vector<int> in_shape_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<Param*>& out) override;
  size_t size() const { return layers_.size(); }
  Layer& layer(size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// y = x + body(x); body must preserve shape.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(int channels, Rng& rng);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<Param*>& out) override;

 private:
  Sequential body_;
};

// ---- parameter utilities ----

using ParamList = std::vector<Param*>;

void zero_grads(const ParamList& params);
uint64_t params_checksum(const ParamList& params);
bool params_all_finite(const ParamList& params);
// deep copy / restore of parameter values (not grads)
std::vector<Tensor> snapshot_values(const ParamList& params);
void restore_values(const ParamList& params, const std::vector<Tensor>& snap);

// ---- optimizers ----

// Optimizer state is keyed by param name so it can be checkpointed and so
// the same optimizer can be re-bound after a model is reloaded.
class SgdMomentum {
 public:
  explicit SgdMomentum(double lr = 1e-3, double momentum = 0.9)
      : lr_(lr), momentum_(momentum) {}
  void step(const ParamList& params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::map<std::string, Tensor>& state() { return velocity_; }

 private:
  double lr_, momentum_;
  std::map<std::string, Tensor> velocity_;
};

class Adam {
 public:
  explicit Adam(double lr = 1e-4, double beta1 = 0.5, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const ParamList& params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  int64_t t() const { return t_; }
  void set_t(int64_t t) { t_ = t; }
  std::map<std::string, Tensor>& state_m() { return m_; }
  std::map<std::string, Tensor>& state_v() { return v_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

}  // namespace mmtod

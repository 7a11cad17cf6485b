#include "mmtod/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace mmtod {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// ---- Conv2d ----

static Tensor he_init(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  double std = std::sqrt(2.0 / fan_in);
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
  return t;
}

Conv2d::Conv2d(int in_c, int out_c, int kernel, int stride, int pad, Rng& rng)
    : in_c_(in_c),
      out_c_(out_c),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      weight_("weight", he_init({out_c, in_c * kernel * kernel}, in_c * kernel * kernel, rng)),
      bias_("bias", Tensor({out_c})) {}

static void im2col(const Tensor& x, int k, int stride, int pad, int out_h, int out_w,
                   Tensor& cols) {
  int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  int row = 0;
  double* cd = cols.data();
  int n_out = out_h * out_w;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        double* dst = cd + static_cast<size_t>(row) * n_out;
        for (int oy = 0; oy < out_h; ++oy) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < out_w; ++ox) dst[oy * out_w + ox] = 0.0;
            continue;
          }
          const double* src = x.data() + (static_cast<size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            int ix = ox * stride + kx - pad;
            dst[oy * out_w + ox] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

static void col2im_accum(const Tensor& cols, int c_in, int h, int w, int k, int stride,
                         int pad, int out_h, int out_w, Tensor& dx) {
  int row = 0;
  const double* cd = cols.data();
  int n_out = out_h * out_w;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const double* src = cd + static_cast<size_t>(row) * n_out;
        for (int oy = 0; oy < out_h; ++oy) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          double* dst = dx.data() + (static_cast<size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.ndim() != 3 || x.dim(0) != in_c_)
    throw std::invalid_argument("Conv2d: bad input shape");
  int h = x.dim(1), w = x.dim(2);
  int out_h = (h + 2 * pad_ - k_) / stride_ + 1;
  int out_w = (w + 2 * pad_ - k_) / stride_ + 1;
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("Conv2d: input too small");
  in_h_ = h;
  in_w_ = w;
  if (cols_.shape() != std::vector<int>{in_c_ * k_ * k_, out_h * out_w})
    cols_ = Tensor({in_c_ * k_ * k_, out_h * out_w});
  im2col(x, k_, stride_, pad_, out_h, out_w, cols_);

  Tensor y({out_c_, out_h, out_w});
  ConstMatMap W(weight_.value.data(), out_c_, in_c_ * k_ * k_);
  ConstMatMap C(cols_.data(), in_c_ * k_ * k_, out_h * out_w);
  MatMap Y(y.data(), out_c_, out_h * out_w);
  Y.noalias() = W * C;
  for (int oc = 0; oc < out_c_; ++oc) Y.row(oc).array() += bias_.value[static_cast<size_t>(oc)];
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  int out_h = dy.dim(1), out_w = dy.dim(2);
  int h = in_h_, w = in_w_;
  ConstMatMap DY(dy.data(), out_c_, out_h * out_w);
  ConstMatMap C(cols_.data(), in_c_ * k_ * k_, out_h * out_w);
  ConstMatMap W(weight_.value.data(), out_c_, in_c_ * k_ * k_);

  MatMap DW(weight_.grad.data(), out_c_, in_c_ * k_ * k_);
  DW.noalias() += DY * C.transpose();
  for (int oc = 0; oc < out_c_; ++oc) bias_.grad[static_cast<size_t>(oc)] += DY.row(oc).sum();

  Tensor dcols({in_c_ * k_ * k_, out_h * out_w});
  MatMap DC(dcols.data(), in_c_ * k_ * k_, out_h * out_w);
  DC.noalias() = W.transpose() * DY;

  Tensor dx({in_c_, h, w});
  col2im_accum(dcols, in_c_, h, w, k_, stride_, pad_, out_h, out_w, dx);
  return dx;
}

void Conv2d::collect_params(const std::string& prefix, std::vector<Param*>& out) {
  weight_.name = prefix + ".weight";
  bias_.name = prefix + ".bias";
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---- Linear ----

Linear::Linear(int in_dim, int out_dim, Rng& rng)
    : in_dim_(in_dim),
      out_dim_(out_dim),
      weight_("weight", he_init({out_dim, in_dim}, in_dim, rng)),
      bias_("bias", Tensor({out_dim})) {}

Tensor Linear::forward(const Tensor& x) {
  if (static_cast<int>(x.numel()) != in_dim_)
    throw std::invalid_argument("Linear: bad input size");
  input_ = x;
  Tensor y({out_dim_});
  ConstMatMap W(weight_.value.data(), out_dim_, in_dim_);
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), in_dim_);
  Eigen::Map<Eigen::VectorXd> yv(y.data(), out_dim_);
  yv.noalias() = W * xv;
  for (int i = 0; i < out_dim_; ++i) yv[i] += bias_.value[static_cast<size_t>(i)];
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  ConstMatMap W(weight_.value.data(), out_dim_, in_dim_);
  Eigen::Map<const Eigen::VectorXd> dyv(dy.data(), out_dim_);
  Eigen::Map<const Eigen::VectorXd> xv(input_.data(), in_dim_);
  MatMap DW(weight_.grad.data(), out_dim_, in_dim_);
  DW.noalias() += dyv * xv.transpose();
  for (int i = 0; i < out_dim_; ++i) bias_.grad[static_cast<size_t>(i)] += dyv[i];
  Tensor dx(input_.shape());
  Eigen::Map<Eigen::VectorXd> dxv(dx.data(), in_dim_);
  dxv.noalias() = W.transpose() * dyv;
  return dx;
}

void Linear::collect_params(const std::string& prefix, std::vector<Param*>& out) {
  weight_.name = prefix + ".weight";
  bias_.name = prefix + ".bias";
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---- activations ----

Tensor ReLU::forward(const Tensor& x) {
  input_ = x;
  Tensor y(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0 ? x[i] : 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx(dy.shape());
  for (size_t i = 0; i < dy.numel(); ++i) dx[i] = input_[i] > 0 ? dy[i] : 0.0;
  return dx;
}

Tensor LeakyReLU::forward(const Tensor& x) {
  input_ = x;
  Tensor y(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0 ? x[i] : slope_ * x[i];
  return y;
}

Tensor LeakyReLU::backward(const Tensor& dy) {
  Tensor dx(dy.shape());
  for (size_t i = 0; i < dy.numel(); ++i) dx[i] = input_[i] > 0 ? dy[i] : slope_ * dy[i];
  return dx;
}

InstanceNorm2d::InstanceNorm2d(int channels, double eps)
    : channels_(channels),
      eps_(eps),
      gamma_("gamma", Tensor({channels})),
      beta_("beta", Tensor({channels})) {
  for (int c = 0; c < channels; ++c) gamma_.value[static_cast<size_t>(c)] = 1.0;
}

Tensor InstanceNorm2d::forward(const Tensor& x) {
  if (x.ndim() != 3 || x.dim(0) != channels_)
    throw std::invalid_argument("InstanceNorm2d: expected [" +
                                std::to_string(channels_) + ", H, W] input");
  int h = x.dim(1), w = x.dim(2);
  size_t n = static_cast<size_t>(h) * static_cast<size_t>(w);
  xhat_ = Tensor(x.shape());
  inv_std_.assign(static_cast<size_t>(channels_), 0.0);
  Tensor y(x.shape());
  for (int c = 0; c < channels_; ++c) {
    const double* xc = x.data() + static_cast<size_t>(c) * n;
    double mean = 0;
    for (size_t i = 0; i < n; ++i) mean += xc[i];
    mean /= static_cast<double>(n);
    double var = 0;
    for (size_t i = 0; i < n; ++i) var += (xc[i] - mean) * (xc[i] - mean);
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps_);
    inv_std_[static_cast<size_t>(c)] = is;
    double g = gamma_.value[static_cast<size_t>(c)], b = beta_.value[static_cast<size_t>(c)];
    double* xh = xhat_.data() + static_cast<size_t>(c) * n;
    double* yc = y.data() + static_cast<size_t>(c) * n;
    for (size_t i = 0; i < n; ++i) {
      xh[i] = (xc[i] - mean) * is;
      yc[i] = g * xh[i] + b;
    }
  }
  return y;
}

Tensor InstanceNorm2d::backward(const Tensor& dy) {
  int h = xhat_.dim(1), w = xhat_.dim(2);
  size_t n = static_cast<size_t>(h) * static_cast<size_t>(w);
  Tensor dx(xhat_.shape());
  for (int c = 0; c < channels_; ++c) {
    const double* dyc = dy.data() + static_cast<size_t>(c) * n;
    const double* xh = xhat_.data() + static_cast<size_t>(c) * n;
    double sum_dy = 0, sum_dy_xh = 0;
    for (size_t i = 0; i < n; ++i) {
      sum_dy += dyc[i];
      sum_dy_xh += dyc[i] * xh[i];
    }
    gamma_.grad[static_cast<size_t>(c)] += sum_dy_xh;
    beta_.grad[static_cast<size_t>(c)] += sum_dy;
    double g_is = gamma_.value[static_cast<size_t>(c)] * inv_std_[static_cast<size_t>(c)];
    double mean_dy = sum_dy / static_cast<double>(n);
    double mean_dy_xh = sum_dy_xh / static_cast<double>(n);
    double* dxc = dx.data() + static_cast<size_t>(c) * n;
    for (size_t i = 0; i < n; ++i)
      dxc[i] = g_is * (dyc[i] - mean_dy - xh[i] * mean_dy_xh);
  }
  return dx;
}

void InstanceNorm2d::collect_params(const std::string& prefix, std::vector<Param*>& out) {
  gamma_.name = prefix + ".gamma";
  beta_.name = prefix + ".beta";
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

Tensor BoundedOutput::forward(const Tensor& x) {
  Tensor y(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) y[i] = 0.5 * (std::tanh(x[i]) + 1.0);
  output_ = y;
  return y;
}

Tensor BoundedOutput::backward(const Tensor& dy) {
  // dy/dx = 0.5*(1 - tanh^2) = 2*y*(1-y)
  Tensor dx(dy.shape());
  for (size_t i = 0; i < dy.numel(); ++i)
    dx[i] = dy[i] * 2.0 * output_[i] * (1.0 - output_[i]);
  return dx;
}

// ---- upsample ----

Tensor Upsample2x::forward(const Tensor& x) {
  in_shape_ = x.shape();
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor y({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double v = x.at(ch, i, j);
        y.at(ch, 2 * i, 2 * j) = v;
        y.at(ch, 2 * i, 2 * j + 1) = v;
        y.at(ch, 2 * i + 1, 2 * j) = v;
        y.at(ch, 2 * i + 1, 2 * j + 1) = v;
      }
  return y;
}

Tensor Upsample2x::backward(const Tensor& dy) {
  int c = in_shape_[0], h = in_shape_[1], w = in_shape_[2];
  Tensor dx({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        dx.at(ch, i, j) = dy.at(ch, 2 * i, 2 * j) + dy.at(ch, 2 * i, 2 * j + 1) +
                          dy.at(ch, 2 * i + 1, 2 * j) + dy.at(ch, 2 * i + 1, 2 * j + 1);
  return dx;
}

// ---- containers ----

Tensor Sequential::forward(const Tensor& x) {
  Tensor y = x;
  for (auto& l : layers_) y = l->forward(y);
  return y;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor d = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d);
  return d;
}

void Sequential::collect_params(const std::string& prefix, std::vector<Param*>& out) {
  for (size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->collect_params(prefix + "." + std::to_string(i), out);
}

ResidualBlock::ResidualBlock(int channels, Rng& rng) {
  body_.add(std::make_unique<Conv2d>(channels, channels, 3, 1, 1, rng));
  body_.add(std::make_unique<InstanceNorm2d>(channels));
  body_.add(std::make_unique<ReLU>());
  body_.add(std::make_unique<Conv2d>(channels, channels, 3, 1, 1, rng));
  body_.add(std::make_unique<InstanceNorm2d>(channels));
}

Tensor ResidualBlock::forward(const Tensor& x) {
  Tensor y = body_.forward(x);
  y.add_scaled(x, 1.0);
  return y;
}

Tensor ResidualBlock::backward(const Tensor& dy) {
  Tensor dx = body_.backward(dy);
  dx.add_scaled(dy, 1.0);
  return dx;
}

void ResidualBlock::collect_params(const std::string& prefix, std::vector<Param*>& out) {
  body_.collect_params(prefix + ".body", out);
}

// ---- parameter utilities ----

void zero_grads(const ParamList& params) {
  for (auto* p : params) p->grad.zero();
}

uint64_t params_checksum(const ParamList& params) {
  uint64_t h = 1469598103934665603ull;
  for (auto* p : params) {
    uint64_t c = p->value.checksum();
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

bool params_all_finite(const ParamList& params) {
  for (auto* p : params)
    if (!p->value.all_finite()) return false;
  return true;
}

std::vector<Tensor> snapshot_values(const ParamList& params) {
  std::vector<Tensor> snap;
  snap.reserve(params.size());
  for (auto* p : params) snap.push_back(p->value);
  return snap;
}

void restore_values(const ParamList& params, const std::vector<Tensor>& snap) {
  for (size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

// ---- optimizers ----

void SgdMomentum::step(const ParamList& params) {
  for (auto* p : params) {
    auto it = velocity_.find(p->name);
    if (it == velocity_.end())
      it = velocity_.emplace(p->name, Tensor(p->value.shape())).first;
    Tensor& v = it->second;
    for (size_t i = 0; i < p->value.numel(); ++i) {
      v[i] = momentum_ * v[i] + p->grad[i];
      p->value[i] -= lr_ * v[i];
    }
  }
}

void Adam::step(const ParamList& params) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto* p : params) {
    auto im = m_.find(p->name);
    if (im == m_.end()) im = m_.emplace(p->name, Tensor(p->value.shape())).first;
    auto iv = v_.find(p->name);
    if (iv == v_.end()) iv = v_.emplace(p->name, Tensor(p->value.shape())).first;
    Tensor& m = im->second;
    Tensor& v = iv->second;
    for (size_t i = 0; i < p->value.numel(); ++i) {
      double g = p->grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      double mh = m[i] / bc1, vh = v[i] / bc2;
      p->value[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

}  // namespace mmtod

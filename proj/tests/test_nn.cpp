#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <memory>

#include "mmtod/nn.hpp"
#include "mmtod/rng.hpp"

using namespace mmtod;

namespace {

// Scalar probe loss: weighted sum of outputs with fixed random weights, so
// d(loss)/d(output) is a known constant tensor.
struct Probe {
  Tensor w;
  explicit Probe(const std::vector<int>& shape, Rng& rng) : w(shape) {
    for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1, 1);
  }
  double loss(const Tensor& y) const {
    double s = 0;
    for (size_t i = 0; i < y.numel(); ++i) s += w[i] * y[i];
    return s;
  }
};

// Central-difference check of input and parameter gradients for one layer.
void check_layer_grads(Layer& layer, const Tensor& x, Rng& rng, double tol = 1e-4) {
  Tensor y0 = layer.forward(x);
  Probe probe(y0.shape(), rng);

  ParamList params;
  layer.collect_params("p", params);
  zero_grads(params);
  layer.forward(x);
  Tensor dx = layer.backward(probe.w);

  double h = 1e-6;
  // input gradient (subsample for big tensors)
  size_t stride_x = std::max<size_t>(1, x.numel() / 24);
  for (size_t i = 0; i < x.numel(); i += stride_x) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    double fd = (probe.loss(layer.forward(xp)) - probe.loss(layer.forward(xm))) / (2 * h);
    double err = std::abs(dx[i] - fd) / std::max(1.0, std::abs(fd));
    CHECK(err < tol);
  }
  // parameter gradients
  for (Param* p : params) {
    size_t stride_p = std::max<size_t>(1, p->value.numel() / 24);
    for (size_t i = 0; i < p->value.numel(); i += stride_p) {
      double orig = p->value[i];
      p->value[i] = orig + h;
      double lp = probe.loss(layer.forward(x));
      p->value[i] = orig - h;
      double lm = probe.loss(layer.forward(x));
      p->value[i] = orig;
      double fd = (lp - lm) / (2 * h);
      double err = std::abs(p->grad[i] - fd) / std::max(1.0, std::abs(fd));
      CHECK(err < tol);
    }
  }
}

Tensor random_tensor(const std::vector<int>& shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(shape);
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("Conv2d gradients (stride 1 and 2, with padding)") {
  Rng rng(71);
  {
    Conv2d conv(2, 3, 3, 1, 1, rng);
    check_layer_grads(conv, random_tensor({2, 5, 6}, rng), rng);
  }
  {
    Conv2d conv(3, 2, 3, 2, 1, rng);
    check_layer_grads(conv, random_tensor({3, 6, 6}, rng), rng);
  }
  {
    Conv2d conv(4, 2, 1, 1, 0, rng);  // 1x1 fusion-style conv
    check_layer_grads(conv, random_tensor({4, 4, 4}, rng), rng);
  }
}

TEST_CASE("Conv2d shape contract") {
  Rng rng(72);
  Conv2d conv(1, 4, 3, 2, 1, rng);
  Tensor y = conv.forward(random_tensor({1, 8, 8}, rng));
  CHECK(y.shape() == std::vector<int>{4, 4, 4});
}

TEST_CASE("Linear gradients") {
  Rng rng(73);
  Linear fc(12, 5, rng);
  check_layer_grads(fc, random_tensor({12}, rng), rng);
}

TEST_CASE("activation gradients") {
  Rng rng(74);
  // keep inputs away from the ReLU kink so FD is clean
  auto away_from_zero = [&](const std::vector<int>& shape) {
    Tensor t(shape);
    for (size_t i = 0; i < t.numel(); ++i)
      t[i] = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.1, 1.5);
    return t;
  };
  {
    ReLU relu;
    check_layer_grads(relu, away_from_zero({2, 3, 3}), rng);
  }
  {
    LeakyReLU lrelu(0.2);
    check_layer_grads(lrelu, away_from_zero({2, 3, 3}), rng);
  }
  {
    BoundedOutput bounded;
    check_layer_grads(bounded, random_tensor({2, 3, 3}, rng, -2, 2), rng);
  }
}

TEST_CASE("BoundedOutput maps into [0,1]") {
  Rng rng(75);
  BoundedOutput b;
  Tensor y = b.forward(random_tensor({1, 4, 4}, rng, -50, 50));
  for (size_t i = 0; i < y.numel(); ++i) {
    CHECK(y[i] >= 0.0);
    CHECK(y[i] <= 1.0);
  }
}

TEST_CASE("Upsample2x nearest neighbor and gradient") {
  Rng rng(76);
  Upsample2x up;
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor y = up.forward(x);
  CHECK(y.shape() == std::vector<int>{2, 6, 8});
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 8; ++j)
        CHECK(y.at(c, i, j) == x.at(c, i / 2, j / 2));
  check_layer_grads(up, x, rng);
}

TEST_CASE("InstanceNorm2d normalizes per channel and gradients check") {
  Rng rng(79);
  InstanceNorm2d norm(3);
  Tensor x = random_tensor({3, 5, 4}, rng);
  Tensor y = norm.forward(x);
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 4; ++j) mean += y.at(c, i, j);
    mean /= 20;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 4; ++j) var += (y.at(c, i, j) - mean) * (y.at(c, i, j) - mean);
    var /= 20;
    CHECK(std::abs(mean) < 1e-9);           // gamma=1, beta=0 at init
    CHECK(std::abs(var - 1.0) < 1e-3);      // up to eps
  }
  // non-trivial affine for the gradient check
  for (int c = 0; c < 3; ++c) {
    norm.gamma().value[static_cast<size_t>(c)] = rng.uniform(0.5, 1.5);
    norm.beta().value[static_cast<size_t>(c)] = rng.uniform(-0.3, 0.3);
  }
  check_layer_grads(norm, x, rng);
  CHECK_THROWS(norm.forward(random_tensor({2, 4, 4}, rng)));
}

TEST_CASE("ResidualBlock gradients and skip behavior") {
  Rng rng(77);
  ResidualBlock block(3, rng);
  check_layer_grads(block, random_tensor({3, 4, 4}, rng), rng);
}

TEST_CASE("Sequential composes forwards/backwards") {
  Rng rng(78);
  Sequential net;
  net.add(std::make_unique<Conv2d>(1, 2, 3, 1, 1, rng));
  net.add(std::make_unique<ReLU>());
  net.add(std::make_unique<Conv2d>(2, 1, 3, 1, 1, rng));
  check_layer_grads(net, random_tensor({1, 5, 5}, rng, 0.1, 1.0), rng);
  ParamList p;
  net.collect_params("net", p);
  CHECK(p.size() == 4);  // two convs, weight + bias each
  CHECK(p[0]->name.rfind("net.", 0) == 0);
}

TEST_CASE("param utilities") {
  Rng rng(79);
  Conv2d conv(1, 2, 3, 1, 1, rng);
  ParamList p;
  conv.collect_params("c", p);
  uint64_t before = params_checksum(p);
  auto snap = snapshot_values(p);
  p[0]->value[0] += 1.0;
  CHECK(params_checksum(p) != before);
  restore_values(p, snap);
  CHECK(params_checksum(p) == before);
  CHECK(params_all_finite(p));
  p[0]->value[0] = std::nan("");
  CHECK(!params_all_finite(p));
}

TEST_CASE("SgdMomentum step and state keying") {
  Rng rng(80);
  Linear fc(3, 2, rng);
  ParamList p;
  fc.collect_params("fc", p);
  zero_grads(p);
  for (Param* q : p)
    for (size_t i = 0; i < q->grad.numel(); ++i) q->grad[i] = 1.0;

  SgdMomentum opt(0.1, 0.9);
  auto snap = snapshot_values(p);
  opt.step(p);
  // first step: v = g, x -= lr * v
  CHECK(p[0]->value[0] == doctest::Approx(snap[0][0] - 0.1).epsilon(1e-12));
  opt.step(p);
  // second step with same grads: v = 0.9*1 + 1 = 1.9
  CHECK(p[0]->value[0] == doctest::Approx(snap[0][0] - 0.1 - 0.19).epsilon(1e-9));
  CHECK(opt.state().count(p[0]->name) == 1);

  // zero lr leaves parameters unchanged
  SgdMomentum noop(0.0, 0.9);
  auto snap2 = snapshot_values(p);
  noop.step(p);
  for (size_t k = 0; k < p.size(); ++k)
    for (size_t i = 0; i < p[k]->value.numel(); ++i)
      CHECK(p[k]->value[i] == snap2[k][i]);
}

TEST_CASE("Adam converges on a quadratic") {
  Rng rng(81);
  Param x("x", Tensor({2}));
  x.value[0] = 3.0;
  x.value[1] = -2.0;
  ParamList p{&x};
  Adam opt(0.05);
  for (int it = 0; it < 500; ++it) {
    x.grad.zero();
    x.grad[0] = 2 * (x.value[0] - 1.0);
    x.grad[1] = 2 * (x.value[1] - 0.5);
    opt.step(p);
  }
  CHECK(x.value[0] == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(x.value[1] == doctest::Approx(0.5).epsilon(1e-2));
}

#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "matter/backbone.hpp"
#include "matter/errors.hpp"
#include "matter/numcore.hpp"
#include "matter/tern.hpp"

using namespace matter;
using testutil::uniform;

namespace {

// Straight from the definition, pixel vectors gathered explicitly.
std::vector<double> kernel_oracle(const std::vector<std::vector<double>>& px, int centre,
                                  double eps, bool normalize) {
  const std::size_t taps = px.size(), bands = px[0].size();
  double mean = 0, n = 0;
  for (const auto& p : px)
    for (double v : p) {
      mean += v;
      n += 1;
    }
  mean /= n;
  double var = 0;
  for (const auto& p : px)
    for (double v : p) var += (v - mean) * (v - mean) / n;
  auto norm = [&](const std::vector<double>& p) {
    double s = 0;
    for (double v : p) s += v * v;
    return std::sqrt(s);
  };
  std::vector<double> w(taps);
  double total = 0;
  for (std::size_t t = 0; t < taps; ++t) {
    double dot = 0;
    for (std::size_t b = 0; b < bands; ++b) dot += px[centre][b] * px[t][b];
    w[t] = -(dot / (norm(px[centre]) * norm(px[t]) + eps)) / (var + eps);
    total += std::abs(w[t]);
  }
  if (normalize)
    for (double& v : w) v /= total;
  return w;
}

std::vector<double> window_of(const Tensor& g, int y, int x, int k, int d) {
  const int r = k / 2, bands = g.dim(0);
  std::vector<double> out(static_cast<std::size_t>(bands) * k * k);
  for (int b = 0; b < bands; ++b)
    for (int a = 0; a < k; ++a)
      for (int c = 0; c < k; ++c)
        out[static_cast<std::size_t>((b * k + a) * k + c)] =
            g.at(b, testutil::mirror(y + (a - r) * d, g.dim(1)),
                 testutil::mirror(x + (c - r) * d, g.dim(2)));
  return out;
}

std::vector<std::vector<double>> pixels_of(const std::vector<double>& window, int bands, int k) {
  std::vector<std::vector<double>> px(static_cast<std::size_t>(k * k), std::vector<double>(bands));
  for (int b = 0; b < bands; ++b)
    for (int t = 0; t < k * k; ++t) px[t][b] = window[static_cast<std::size_t>(b * k * k + t)];
  return px;
}

Tensor layer_oracle(const Tensor& f, const Tensor& g, int k, int d) {
  const int r = k / 2;
  Tensor out(f.shape());
  for (int y = 0; y < f.dim(1); ++y)
    for (int x = 0; x < f.dim(2); ++x) {
      const std::vector<double> w =
          kernel_oracle(pixels_of(window_of(g, y, x, k, d), g.dim(0), k), k * k / 2, 1e-6, true);
      for (int c = 0; c < f.dim(0); ++c) {
        double s = 0;
        for (int a = 0; a < k; ++a)
          for (int b = 0; b < k; ++b)
            s += w[static_cast<std::size_t>(a * k + b)] *
                 f.at(c, testutil::mirror(y + (a - r) * d, f.dim(1)),
                      testutil::mirror(x + (b - r) * d, f.dim(2)));
        out.at(c, y, x) = static_cast<float>(s);
      }
    }
  return out;
}

}  // namespace

TEST_CASE("2-band 3x3 fixture kernel equals the scalar formula") {
  const std::vector<double> window{0.2, 0.5, 0.1, 0.9, 0.4, 0.3, 0.7, 0.8, 0.6,
                                   0.3, 0.1, 0.8, 0.2, 0.6, 0.5, 0.4, 0.9, 0.7};
  for (bool normalize : {true, false}) {
    const TernKernel k = compute_kernel(window, 2, 3, 1e-6, normalize);
    const std::vector<double> want = kernel_oracle(pixels_of(window, 2, 3), 4, 1e-6, normalize);
    for (int t = 0; t < 9; ++t) CHECK(k.weights[t] == doctest::Approx(want[t]).epsilon(1e-9));
  }
}

TEST_CASE("normalised kernels have unit absolute sum") {
  Rng rng(21);
  for (int i = 0; i < 50; ++i) {
    const int k = i % 2 ? 3 : 5;
    const Tensor g = uniform({3, k, k}, rng, 0, 1);
    const std::vector<double> w(g.values().begin(), g.values().end());
    const TernKernel kern = compute_kernel(w, 3, k, 1e-6, true);
    double s = 0;
    for (double v : kern.weights) s += std::abs(v);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("zero window gives the all-zero kernel") {
  const std::vector<double> w(2 * 9, 0.0);
  const TernKernel k = compute_kernel(w, 2, 3, 1e-6, true);
  for (double v : k.weights) CHECK(v == 0.0);
}

TEST_CASE("kernel is invariant to guidance scale") {
  Rng rng(22);
  for (int i = 0; i < 40; ++i) {
    const Tensor g = uniform({4, 3, 3}, rng, 0, 1);
    std::vector<double> w(g.values().begin(), g.values().end());
    const TernKernel base = compute_kernel(w, 4, 3, 1e-6, true);
    for (double s : {0.5, 2.0, 10.0}) {
      std::vector<double> ws(w);
      for (double& v : ws) v *= s;
      const TernKernel sk = compute_kernel(ws, 4, 3, 1e-6, true);
      for (int t = 0; t < 9; ++t) CHECK(std::abs(sk.weights[t] - base.weights[t]) <= 1e-5);
    }
  }
}

TEST_CASE("refine_layer matches the per-pixel oracle") {
  Rng rng(23);
  const Tensor g = uniform({4, 9, 8}, rng, 0, 1);
  const Tensor f = uniform({3, 9, 8}, rng);
  for (int d : {1, 2}) {
    const Tensor got = refine_layer(f, g, 3, d, 1e-6, true);
    const Tensor want = layer_oracle(f, g, 3, d);
    CHECK(testutil::max_abs_diff(got, want) <= 1e-5);
  }
}

TEST_CASE("tern_forward composes single layers") {
  Rng rng(24);
  TernConfig cfg;
  cfg.blocks = 2;
  const Tensor g = uniform({4, 10, 10}, rng, 0, 1);
  const Tensor f = uniform({2, 10, 10}, rng);
  Tensor step = f;
  for (int l = 0; l < cfg.layer_count(); ++l)
    step = refine_layer(step, g, cfg.kernel_size, cfg.dilation_of(l), cfg.epsilon, cfg.normalize);
  CHECK(testutil::max_abs_diff(tern_forward(f, g, cfg), step) <= 1e-5);
}

TEST_CASE("stack backward is the adjoint of forward") {
  Rng rng(25);
  TernConfig cfg;
  cfg.blocks = 2;
  using TD = BasicTensor<double>;
  const TD guide = uniform<double>({2, 3, 8, 8}, rng, 0, 1);
  const TernStack<double> stack(cfg, guide);
  const TD x = uniform<double>({5, 2, 8, 8}, rng);
  const TD y = uniform<double>({5, 2, 8, 8}, rng);
  const TD fx = stack.forward(x);
  const TD bty = stack.backward(y);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lhs += fx[i] * y[i];
    rhs += x[i] * bty[i];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("feature gradient passes through the fixed kernels") {
  Rng rng(26);
  TernConfig cfg;
  cfg.blocks = 1;
  using TD = BasicTensor<double>;
  const TD guide = uniform<double>({1, 3, 6, 6}, rng, 0, 1);
  const TernStack<double> stack(cfg, guide);
  const TD head = uniform<double>({2, 1, 6, 6}, rng);
  const TD x = uniform<double>({2, 1, 6, 6}, rng);
  auto f = [&](const TD& v) {
    const TD o = stack.forward(v);
    double s = 0;
    for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * head[i];
    return s;
  };
  CHECK(finite_diff_check<double>(f, x, stack.backward(head), 1e-5) <= 1e-3);
}

TEST_CASE("interior translation equivariance") {
  Rng rng(27);
  TernConfig cfg;
  cfg.blocks = 1;
  const int radius = 4, size = 20;
  const Tensor g = uniform({3, size + 2, size + 3}, rng, 0, 1);
  const Tensor f = uniform({2, size + 2, size + 3}, rng);
  auto crop = [](const Tensor& t, int r, int c, int n) {
    Tensor o({t.dim(0), n, n});
    for (int b = 0; b < t.dim(0); ++b)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) o.at(b, y, x) = t.at(b, y + r, x + c);
    return o;
  };
  const Tensor a = tern_forward(crop(f, 0, 0, size), crop(g, 0, 0, size), cfg);
  const Tensor b = tern_forward(crop(f, 2, 3, size), crop(g, 2, 3, size), cfg);
  for (int c = 0; c < 2; ++c)
    for (int y = radius; y + 2 < size - radius; ++y)
      for (int x = radius; x + 3 < size - radius; ++x)
        CHECK(std::abs(b.at(c, y, x) - a.at(c, y + 2, x + 3)) <= 1e-5);
}

TEST_CASE("empty stack is the identity") {
  TernConfig cfg;
  cfg.blocks = 0;
  Rng rng(28);
  const Tensor g = uniform({2, 5, 5}, rng, 0, 1);
  const Tensor f = uniform({3, 5, 5}, rng);
  CHECK(tern_forward(f, g, cfg) == f);
}

TEST_CASE("refinement adds no trainable parameters") {
  BackboneConfig a;
  BackboneConfig b = a;
  b.tern.blocks = 0;
  const BackboneParams pa = init_backbone(a);
  const BackboneParams pb = init_backbone(b);
  REQUIRE(pa.named().size() == pb.named().size());
  for (std::size_t i = 0; i < pa.named().size(); ++i)
    CHECK(pa.named()[i].second->shape() == pb.named()[i].second->shape());
}

TEST_CASE("invalid tern configs are rejected") {
  TernConfig c;
  c.kernel_size = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TernConfig{};
  c.dilations = {1, 1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(compute_kernel(std::vector<double>(5), 1, 3, 1e-6, true), ShapeError);
}

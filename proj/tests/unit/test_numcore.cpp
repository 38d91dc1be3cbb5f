#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "matter/errors.hpp"
#include "matter/numcore.hpp"

using namespace matter;
using testutil::uniform;

namespace {

Tensor naive_conv(const Tensor& in, const Tensor& w, int stride, bool reflect) {
  const int cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  const int p = reflect ? (k - 1) / 2 : 0;
  const int ho = (h + 2 * p - k) / stride + 1, wo = (wd + 2 * p - k) / stride + 1;
  Tensor out({cout, ho, wo});
  for (int o = 0; o < cout; ++o)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        double s = 0;
        for (int c = 0; c < cin; ++c)
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
              const int yy = testutil::mirror(y * stride + a - p, h);
              const int xx = testutil::mirror(x * stride + b - p, wd);
              s += static_cast<double>(in.at(c, yy, xx)) * w.at(o, c, a, b);
            }
        out.at(o, y, x) = static_cast<float>(s);
      }
  return out;
}

}  // namespace

TEST_CASE("reflect_index mirrors without repeating the edge") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(-2, 5) == 2);
  CHECK(reflect_index(0, 5) == 0);
  CHECK(reflect_index(4, 5) == 4);
  for (int n = 1; n < 7; ++n)
    for (int i = -3 * n; i < 4 * n; ++i) CHECK(reflect_index(i, n) == testutil::mirror(i, n));
}

TEST_CASE("conv2d fixed case matches nested loops") {
  Rng rng(1);
  const Tensor in = uniform({2, 5, 5}, rng);
  const Tensor w = uniform({3, 2, 3, 3}, rng);
  for (PadMode pad : {PadMode::reflect, PadMode::none}) {
    const Tensor got = conv2d(in, w, 1, pad);
    const Tensor want = naive_conv(in, w, 1, pad == PadMode::reflect);
    REQUIRE(got.shape() == want.shape());
    CHECK(testutil::max_abs_diff(got, want) <= 1e-5);
  }
}

TEST_CASE("conv2d agrees with the loop oracle on 200 random cases") {
  Rng rng(2);
  std::uniform_int_distribution<int> ch(1, 4), ext(3, 9), kk(0, 2), st(1, 2), pm(0, 1);
  int worst_case = -1;
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const int k = 2 * kk(rng) + 1;
    const bool reflect = pm(rng) == 1;
    const int h = std::max(ext(rng), k), w = std::max(ext(rng), k);
    const Tensor in = uniform({ch(rng), h, w}, rng);
    const Tensor wt = uniform({ch(rng), in.dim(0), k, k}, rng);
    const int stride = st(rng);
    const Tensor got = conv2d(in, wt, stride, reflect ? PadMode::reflect : PadMode::none);
    const Tensor want = naive_conv(in, wt, stride, reflect);
    REQUIRE(got.shape() == want.shape());
    const double d = testutil::max_abs_diff(got, want);
    if (d > worst) {
      worst = d;
      worst_case = i;
    }
  }
  INFO("worst case " << worst_case);
  CHECK(worst <= 1e-5);
}

TEST_CASE("conv2d output extent") {
  CHECK(conv_output_extent(7, 3, 1, PadMode::reflect) == 7);
  CHECK(conv_output_extent(7, 3, 1, PadMode::none) == 5);
  CHECK(conv_output_extent(8, 3, 2, PadMode::reflect) == 4);
}

TEST_CASE("batched channel-major convolution equals per-image conv2d") {
  Rng rng(3);
  const int n = 3;
  const BasicTensor<float> in = uniform({2, n, 6, 5}, rng);
  const Tensor w = uniform({4, 2, 3, 3}, rng);
  const Tensor out = conv2d_cnhw(in, w, 1, PadMode::reflect);
  for (int b = 0; b < n; ++b) {
    Tensor img({2, 6, 5});
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 5; ++x) img.at(c, y, x) = in.at(c, b, y, x);
    const Tensor ref = conv2d(img, w, 1, PadMode::reflect);
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 5; ++x) CHECK(out.at(c, b, y, x) == doctest::Approx(ref.at(c, y, x)).epsilon(1e-5));
  }
}

TEST_CASE("convolution backward matches finite differences") {
  Rng rng(4);
  using TD = BasicTensor<double>;
  const TD in = uniform<double>({2, 2, 5, 5}, rng);
  const TD w = uniform<double>({3, 2, 3, 3}, rng);
  const TD head = uniform<double>({3, 2, 5, 5}, rng);
  auto f_in = [&](const TD& x) {
    const TD o = conv2d_cnhw(x, w, 1, PadMode::reflect);
    double s = 0;
    for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * head[i];
    return s;
  };
  auto f_w = [&](const TD& x) {
    const TD o = conv2d_cnhw(in, x, 1, PadMode::reflect);
    double s = 0;
    for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * head[i];
    return s;
  };
  TD gin(in.shape());
  TD gw(w.shape());
  conv2d_cnhw_backward(in, w, head, 1, PadMode::reflect, &gin, gw);
  CHECK(finite_diff_check<double>(f_in, in, gin, 1e-5) <= 1e-6);
  CHECK(finite_diff_check<double>(f_w, w, gw, 1e-5) <= 1e-6);
}

TEST_CASE("gemm handles transposes") {
  Rng rng(5);
  const int m = 3, n = 4, k = 5;
  const Tensor a = uniform({m, k}, rng), b = uniform({k, n}, rng);
  Tensor at({k, m}), bt({n, k});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) at.at(j, i) = a.at(i, j);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) bt.at(j, i) = b.at(i, j);
  Tensor want({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int t = 0; t < k; ++t) want.at(i, j) += a.at(i, t) * b.at(t, j);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      Tensor c({m, n}, 1.0f);
      gemm<float>(ta, tb, m, n, k, ta ? at.data() : a.data(), tb ? bt.data() : b.data(), c.data(), true);
      for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i] + 1.0f).epsilon(1e-5));
    }
}

TEST_CASE("sgd with momentum and weight decay") {
  Tensor p({2}, std::vector<float>{1.0f, -2.0f});
  Tensor* params[] = {&p};
  SgdState s;
  s.learning_rate = 0.1;
  s.momentum = 0.5;
  s.weight_decay = 0.01;
  const Tensor g({2}, std::vector<float>{0.5f, 0.0f});
  sgd_step(params, std::span<const Tensor>(&g, 1), s);
  // v1 = g + wd*p = (0.51, -0.02); p = p - 0.1*v1
  CHECK(p[0] == doctest::Approx(1.0 - 0.051));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.002));
  sgd_step(params, std::span<const Tensor>(&g, 1), s);
  const double v0 = 0.5 * 0.51 + 0.5 + 0.01 * (1.0 - 0.051);
  CHECK(p[0] == doctest::Approx(1.0 - 0.051 - 0.1 * v0));
}

TEST_CASE("sgd with zero gradient and zero decay leaves parameters") {
  Tensor p({3}, 0.7f);
  Tensor* params[] = {&p};
  SgdState s;
  s.weight_decay = 0;
  const Tensor g({3});
  sgd_step(params, std::span<const Tensor>(&g, 1), s);
  for (float v : p.values()) CHECK(v == 0.7f);
}

TEST_CASE("finite_diff_check trivial functions") {
  Tensor x({1}, 3.0f);
  Tensor g({1}, 6.0f);
  CHECK(finite_diff_check<float>([](const Tensor& t) { return double(t[0]) * t[0]; }, x, g) <= 1e-6);
  Rng rng(6);
  const Tensor v = uniform({7}, rng);
  const Tensor ones({7}, 1.0f);
  CHECK(finite_diff_check<float>(
            [](const Tensor& t) {
              double s = 0;
              for (float e : t.values()) s += e;
              return s;
            },
            v, ones) <= 1e-6);
}

TEST_CASE("require_finite rejects NaN") {
  Tensor t({2});
  t[1] = std::nanf("");
  CHECK_THROWS_AS(require_finite(t, "t"), NumericalError);
}

TEST_CASE("tensor shape mismatch raises") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
}

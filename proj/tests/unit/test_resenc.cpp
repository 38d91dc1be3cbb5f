#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "matter/numcore.hpp"
#include "matter/resenc.hpp"

using namespace matter;
using testutil::uniform;

namespace {

ClusterBank random_bank(Rng& rng, int u, int d) {
  return {uniform({u, d}, rng, -0.5, 0.5), uniform({u}, rng, -0.5, 0.5)};
}

std::vector<double> softmax_oracle(const std::vector<float>& z, const ClusterBank& b) {
  const int u = b.clusters(), d = b.dim();
  std::vector<double> logit(u);
  for (int k = 0; k < u; ++k) {
    double ss = 0;
    for (int j = 0; j < d; ++j) ss += std::pow(double(z[j]) - b.centers.at(k, j), 2);
    logit[k] = -std::exp(double(b.log_smoothing[k])) * ss;
  }
  double mx = logit[0];
  for (double l : logit) mx = std::max(mx, l);
  double total = 0;
  for (double& l : logit) total += (l = std::exp(l - mx));
  for (double& l : logit) l /= total;
  return logit;
}

}  // namespace

TEST_CASE("residuals and affinities match direct formulas") {
  Rng rng(51);
  const ClusterBank bank = random_bank(rng, 5, 6);
  const Tensor zt = uniform({6}, rng);
  const std::vector<float> z(zt.values().begin(), zt.values().end());
  const Tensor r = residuals(z, bank);
  for (int k = 0; k < 5; ++k)
    for (int j = 0; j < 6; ++j) CHECK(std::abs(r.at(k, j) - (z[j] - bank.centers.at(k, j))) <= 1e-6);
  const Tensor th = affinity_weights(z, bank);
  const std::vector<double> want = softmax_oracle(z, bank);
  double sum = 0;
  for (int k = 0; k < 5; ++k) {
    CHECK(std::abs(th[k] - want[k]) <= 1e-6);
    CHECK(th[k] > 0);
    CHECK(th[k] < 1);
    sum += th[k];
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

  const ResidualDescriptor rd = cumulative_residual(z, bank);
  double norm = 0;
  for (int j = 0; j < 6; ++j) {
    double c = 0;
    for (int k = 0; k < 5; ++k) c += want[k] * (z[j] - bank.centers.at(k, j)) / 5.0;
    CHECK(std::abs(rd.cumulative[j] - c) <= 1e-6);
    norm += c * c;
  }
  norm = std::sqrt(norm);
  for (int j = 0; j < 6; ++j) CHECK(std::abs(rd.normalized[j] - rd.cumulative[j] / norm) <= 1e-5);
  CHECK(!rd.degenerate);
}

TEST_CASE("a single centre at z is degenerate") {
  ClusterBank bank{Tensor({1, 3}, std::vector<float>{0.2f, 0.3f, 0.4f}), Tensor({1})};
  const std::vector<float> z{0.2f, 0.3f, 0.4f};
  const ResidualDescriptor rd = cumulative_residual(z, bank);
  CHECK(rd.degenerate);
  for (float v : rd.normalized.values()) CHECK(v == 0.0f);
}

TEST_CASE("word assignment is the smoothing-weighted nearest centre") {
  Rng rng(52);
  ClusterBank bank = random_bank(rng, 8, 4);
  bank.log_smoothing.fill(0.0f);
  for (int t = 0; t < 100; ++t) {
    const Tensor zt = uniform({4}, rng);
    const std::vector<float> z(zt.values().begin(), zt.values().end());
    int best = 0;
    double bd = 1e300;
    for (int k = 0; k < 8; ++k) {
      double d = 0;
      for (int j = 0; j < 4; ++j) d += std::pow(double(z[j]) - bank.centers.at(k, j), 2);
      if (d < bd) {
        bd = d;
        best = k;
      }
    }
    CHECK(word_assign(z, bank) == best);
  }
}

TEST_CASE("batched words equal single assignments") {
  Rng rng(53);
  const ClusterBank bank = random_bank(rng, 6, 5);
  const Tensor z = uniform({20, 5}, rng);
  const std::vector<int> w = word_assign_batch(z, bank);
  for (int n = 0; n < 20; ++n)
    CHECK(w[n] == word_assign(std::span<const float>(z.data() + n * 5, 5), bank));
}

TEST_CASE("batched encoding equals per-row cumulative residuals") {
  Rng rng(54);
  const ClusterBank bank = random_bank(rng, 4, 6);
  const Tensor z = uniform({7, 6}, rng);
  const Tensor f = encode_residuals(bank, z);
  for (int n = 0; n < 7; ++n) {
    const ResidualDescriptor rd = cumulative_residual(std::span<const float>(z.data() + n * 6, 6), bank);
    for (int j = 0; j < 6; ++j) CHECK(std::abs(f.at(n, j) - rd.normalized[j]) <= 1e-6);
  }
}

TEST_CASE("residual gradients match finite differences") {
  Rng rng(55);
  using TD = BasicTensor<double>;
  BasicClusterBank<double> bank = random_bank(rng, 4, 5).cast<double>();
  const TD z = uniform<double>({3, 5}, rng);
  const TD head = uniform<double>({3, 5}, rng);
  auto obj = [&](const BasicClusterBank<double>& b, const TD& zz) {
    const TD f = encode_residuals(b, zz);
    double s = 0;
    for (std::size_t i = 0; i < f.size(); ++i) s += f[i] * head[i];
    return s;
  };
  ResidualTape<double> tape;
  encode_residuals(bank, z, &tape);
  TD gz;
  BasicClusterBank<double> gb = bank.zeros_like();
  residual_backward(bank, tape, head, gz, gb);
  CHECK(finite_diff_check<double>([&](const TD& x) { return obj(bank, x); }, z, gz, 1e-5) <= 1e-3);
  CHECK(finite_diff_check<double>(
            [&](const TD& x) {
              auto b = bank;
              b.centers = x;
              return obj(b, z);
            },
            bank.centers, gb.centers, 1e-5) <= 1e-3);
  CHECK(finite_diff_check<double>(
            [&](const TD& x) {
              auto b = bank;
              b.log_smoothing = x;
              return obj(b, z);
            },
            bank.log_smoothing, gb.log_smoothing, 1e-5) <= 1e-3);
}

TEST_CASE("bank initialisation range and seeding") {
  const ClusterBank b = init_bank(64, 16, 9);
  for (float v : b.centers.values()) CHECK(std::abs(v) <= 0.25f);
  for (float v : b.log_smoothing.values()) CHECK(v == 0.0f);
  CHECK(init_bank(64, 16, 9).centers == b.centers);
}

#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "matter/errors.hpp"
#include "matter/tasks.hpp"

using namespace matter;

namespace {

Model small_model() {
  BackboneConfig b;
  b.stem_channels = 4;
  b.block_channels = {4, 8};
  b.descriptor_dim = 8;
  b.tern.blocks = 1;
  return init_model(b, 6, true, 2);
}

// Exhaustive search over edges, candidates compared by their n0 split.
int brute_otsu(const std::vector<float>& v) {
  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = *std::max_element(v.begin(), v.end());
  const double w = (hi - lo) / 256;
  std::vector<double> c(256);
  for (float x : v) c[std::clamp(int((x - lo) / w), 0, 255)] += 1;
  double best = -1;
  int edge = 0;
  std::vector<double> below(256);
  for (int t = 1; t < 256; ++t) {
    double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int b = 0; b < 256; ++b) {
      const double m = lo + (b + 0.5) * w;
      if (b < t) {
        n0 += c[b];
        s0 += c[b] * m;
      } else {
        n1 += c[b];
        s1 += c[b] * m;
      }
    }
    below[t] = n0;
    if (n0 == 0 || n1 == 0) continue;
    const double var = n0 * n1 / ((n0 + n1) * (n0 + n1)) * std::pow(s0 / n0 - s1 / n1, 2);
    if (var > best + 1e-12 * best) {
      best = var;
      edge = t;
    }
  }
  std::vector<int> same;
  for (int t = 1; t < 256; ++t)
    if (below[t] == below[edge]) same.push_back(t);
  return same[(same.size() - 1) / 2];
}

}  // namespace

TEST_CASE("otsu on two separated clusters splits between them") {
  std::vector<float> v;
  for (int i = 0; i < 50; ++i) v.push_back(0.1f + 0.001f * i);
  for (int i = 0; i < 30; ++i) v.push_back(0.9f + 0.001f * i);
  const OtsuResult r = otsu_threshold(v);
  CHECK(!r.degenerate);
  CHECK(r.threshold > 0.15);
  CHECK(r.threshold < 0.9);
}

TEST_CASE("otsu with two values takes the middle of the empty gap") {
  const std::vector<float> v{0, 0, 1, 1, 1};
  const OtsuResult r = otsu_threshold(v);
  CHECK(r.edge == 128);
  CHECK(r.threshold == doctest::Approx(0.5));
}

TEST_CASE("otsu agrees with exhaustive search on 1000 random sets") {
  Rng rng(71);
  std::uniform_int_distribution<int> len(2, 600);
  std::normal_distribution<double> g(0, 1);
  std::uniform_int_distribution<int> lev(0, 5);
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<float> v(static_cast<std::size_t>(len(rng)));
    for (float& x : v) x = static_cast<float>(i % 3 == 0 ? lev(rng) : (i % 3 == 1 ? g(rng) : std::exp(g(rng))));
    if (*std::min_element(v.begin(), v.end()) == *std::max_element(v.begin(), v.end())) continue;
    mismatches += otsu_threshold(v).edge != brute_otsu(v);
  }
  CHECK(mismatches == 0);
}

TEST_CASE("constant scores are degenerate and mark nothing") {
  const ChangeMap m = threshold_scores(Tensor({4, 4}, 0.3f));
  CHECK(m.degenerate);
  for (float v : m.mask.values()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(otsu_threshold(std::vector<float>{}), DataError);
  CHECK_THROWS_AS(otsu_threshold(std::vector<float>{1.0f, std::nanf("")}), NumericalError);
}

TEST_CASE("prf arithmetic") {
  const PrfReport r = prf_from_counts(681457, 1816250 - 681457, 938000 - 681457);
  CHECK(r.precision == doctest::Approx(37.52).epsilon(1e-4));
  CHECK(r.f1 == doctest::Approx(49.48).epsilon(2e-4));
  CHECK(f1_score(61.80, 57.13) == doctest::Approx(59.37).epsilon(2e-4));
  const PrfReport none = prf_from_counts(0, 0, 0);
  CHECK(none.f1 == 0.0);
}

TEST_CASE("prf1 on small masks") {
  const Tensor pred({2, 3}, std::vector<float>{1, 1, 0, 0, 1, 0});
  const Tensor truth({2, 3}, std::vector<float>{1, 0, 0, 1, 1, 0});
  const PrfReport r = prf1(pred, truth);
  CHECK(r.tp == 2);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(r.f1 == doctest::Approx(200.0 / 3));
  CHECK_THROWS_AS(prf1(pred, Tensor({3, 2})), ShapeError);
}

TEST_CASE("identical inputs give no change") {
  Rng rng(72);
  const Model m = small_model();
  MultiSpectralImage img;
  img.pixels = testutil::uniform({4, 10, 9}, rng, 0, 1);
  const ChangeMap c = detect_change(img, img, m, 5);
  for (float v : c.score.values()) CHECK(v == 0.0f);
  for (float v : c.mask.values()) CHECK(v == 0.0f);
  CHECK(c.degenerate);
}

TEST_CASE("constant image gives a constant word map, deterministically") {
  const Model m = small_model();
  MultiSpectralImage img;
  img.pixels = Tensor({4, 8, 8}, 0.4f);
  const WordMap w = word_map(img, m, 5);
  CHECK(w.height == 8);
  for (int v : w.words) CHECK(v == w.words[0]);
  Rng rng(73);
  img.pixels = testutil::uniform({4, 8, 8}, rng, 0, 1);
  const WordMap a = word_map(img, m, 5), b = word_map(img, m, 5);
  CHECK(a.words == b.words);
  for (int v : a.words) CHECK((v >= 0 && v < a.clusters));
}

TEST_CASE("dense features match window-by-window description") {
  Rng rng(74);
  const Model m = small_model();
  MultiSpectralImage img;
  img.pixels = testutil::uniform({4, 5, 6}, rng, 0, 1);
  const Tensor f = dense_features(img, m, 5);
  std::size_t i = 0;
  for (const auto& w : dense_windows(img, 5)) {
    const Tensor one = describe(m, w.patch.reshaped({1, 4, 5, 5}));
    for (int d = 0; d < 8; ++d) CHECK(std::abs(one[d] - f.at(int(i), d)) <= 1e-6);
    ++i;
  }
}

TEST_CASE("word purity per class") {
  WordMap w;
  w.height = 1;
  w.width = 6;
  w.clusters = 3;
  w.words = {0, 0, 1, 2, 2, 2};
  const Tensor labels({1, 6}, std::vector<float>{0, 0, 0, 2, 2, 2});
  const std::vector<double> p = word_purity(w, labels);
  REQUIRE(p.size() == 3);
  CHECK(p[0] == doctest::Approx(2.0 / 3));
  CHECK(p[1] == -1.0);
  CHECK(p[2] == 1.0);
}

TEST_CASE("sweep grid formatting") {
  SweepGrid g{{7, 17}, {9}, {85.5, 80.25}};
  CHECK(g.to_tsv() == "train\\infer\t9\n7\t85.50\n17\t80.25\n");
  const std::vector<int> bad{8};
  CHECK_THROWS_AS(rf_sweep(Corpus{}, {}, bad, bad, ModelSetup{}, TrainConfig{}), ConfigError);
}

TEST_CASE("metric report lines") {
  const std::string s = metric_report(prf_from_counts(1, 1, 0));
  CHECK(s.find("precision\t50\n") != std::string::npos);
  CHECK(s.find("recall\t100\n") != std::string::npos);
}

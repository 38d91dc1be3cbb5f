#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "matter/backbone.hpp"
#include "matter/errors.hpp"
#include "matter/numcore.hpp"

using namespace matter;
using testutil::uniform;

namespace {

BackboneConfig small_config() {
  BackboneConfig c;
  c.in_bands = 3;
  c.stem_channels = 4;
  c.block_channels = {4, 6};
  c.descriptor_dim = 5;
  c.tern.blocks = 1;
  c.rng_seed = 41;
  return c;
}

}  // namespace

TEST_CASE("descriptors have unit norm") {
  Rng rng(42);
  const BackboneConfig cfg;
  const BackboneParams p = init_backbone(cfg);
  const Tensor patches = uniform({6, 4, 7, 7}, rng, 0, 1);
  const Tensor z = encode_batch(p, cfg, patches);
  REQUIRE(z.shape() == std::vector<int>{6, cfg.descriptor_dim});
  for (int n = 0; n < 6; ++n) {
    double s = 0;
    for (int d = 0; d < cfg.descriptor_dim; ++d) s += double(z.at(n, d)) * z.at(n, d);
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("batch encoding equals a loop over single patches") {
  Rng rng(43);
  const BackboneConfig cfg = small_config();
  const BackboneParams p = init_backbone(cfg);
  const Tensor patches = uniform({4, 3, 9, 9}, rng, 0, 1);
  const Tensor z = encode_batch(p, cfg, patches);
  for (int n = 0; n < 4; ++n) {
    Tensor one({3, 9, 9});
    std::copy(patches.data() + n * one.size(), patches.data() + (n + 1) * one.size(), one.data());
    const Tensor zn = encode_patch(p, cfg, one);
    for (int d = 0; d < cfg.descriptor_dim; ++d) CHECK(std::abs(zn[d] - z.at(n, d)) <= 1e-6);
  }
}

TEST_CASE("zero input maps to the first basis vector") {
  const BackboneConfig cfg = small_config();
  const BackboneParams p = init_backbone(cfg);
  const Tensor z = encode_patch(p, cfg, Tensor({3, 7, 7}));
  CHECK(z[0] == 1.0f);
  for (int d = 1; d < cfg.descriptor_dim; ++d) CHECK(z[d] == 0.0f);
}

TEST_CASE("encoder is invariant to positive input scale") {
  Rng rng(44);
  const BackboneConfig cfg = small_config();
  const BackboneParams p = init_backbone(cfg);
  Tensor x = uniform({3, 7, 7}, rng, 0.1, 1);
  const Tensor z = encode_patch(p, cfg, x);
  for (float& v : x.values()) v *= 3.0f;
  CHECK(testutil::max_abs_diff(encode_patch(p, cfg, x), z) <= 1e-5);
}

TEST_CASE("parameter gradients match finite differences") {
  Rng rng(45);
  const BackboneConfig cfg = small_config();
  BasicBackboneParams<double> p = init_backbone(cfg).cast<double>();
  const BasicTensor<double> patches = uniform<double>({2, 3, 7, 7}, rng, 0, 1);
  const BasicTensor<double> head = uniform<double>({2, cfg.descriptor_dim}, rng);
  auto objective = [&]() {
    const BasicTensor<double> z = encode_batch(p, cfg, patches);
    double s = 0;
    for (std::size_t i = 0; i < z.size(); ++i) s += z[i] * head[i];
    return s;
  };
  BackboneTape<double> tape;
  encode_batch(p, cfg, patches, &tape);
  BasicBackboneParams<double> g = p.zeros_like();
  backbone_backward(p, cfg, tape, head, g);
  auto live = p.named();
  auto analytic = g.named();
  for (std::size_t i = 0; i < live.size(); ++i) {
    BasicTensor<double>& target = *live[i].second;
    if (target.empty()) continue;
    const BasicTensor<double> saved = target;
    const double err = finite_diff_check<double>(
        [&](const BasicTensor<double>& x) {
          target = x;
          return objective();
        },
        saved, *analytic[i].second, 1e-5);
    target = saved;
    INFO(live[i].first);
    CHECK(err <= 1e-3);
  }
}

TEST_CASE("initialisation is seeded") {
  BackboneConfig a = small_config();
  CHECK(init_backbone(a).stem == init_backbone(a).stem);
  BackboneConfig b = a;
  b.rng_seed = a.rng_seed + 1;
  CHECK(!(init_backbone(a).stem == init_backbone(b).stem));
}

TEST_CASE("band mismatch is a shape error") {
  const BackboneConfig cfg = small_config();
  const BackboneParams p = init_backbone(cfg);
  CHECK_THROWS_AS(encode_batch(p, cfg, Tensor({1, 2, 7, 7})), ShapeError);
}

TEST_CASE("stem maps keep image extents") {
  Rng rng(46);
  const BackboneConfig cfg = small_config();
  const StemMaps m = stem_maps(init_backbone(cfg), cfg, uniform({3, 12, 10}, rng, 0, 1));
  CHECK(m.before.shape() == std::vector<int>{cfg.stem_channels, 12, 10});
  CHECK(m.after.shape() == m.before.shape());
}

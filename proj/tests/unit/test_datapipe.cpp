#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "matter/datapipe.hpp"
#include "matter/errors.hpp"

using namespace matter;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("matter_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("raster round trip is exact") {
  Rng rng(31);
  const Tensor t = testutil::uniform({3, 4, 5}, rng, 0, 2);
  const fs::path dir = scratch("raster");
  write_raster(dir / "a.msr", t);
  CHECK(read_raster(dir / "a.msr") == t);
}

TEST_CASE("truncated or foreign rasters are data errors") {
  const fs::path dir = scratch("raster_bad");
  {
    std::ofstream out(dir / "bad.msr", std::ios::binary);
    out << "MSR1 1 2 2\n" << std::string(7, '\0');
  }
  CHECK_THROWS_AS(read_raster(dir / "bad.msr"), DataError);
  {
    std::ofstream out(dir / "png.msr", std::ios::binary);
    out << "\x89PNG....";
  }
  CHECK_THROWS_AS(read_raster(dir / "png.msr"), DataError);
  CHECK_THROWS_AS(read_raster(dir / "missing.msr"), DataError);
}

TEST_CASE("image validation") {
  MultiSpectralImage img;
  img.pixels = Tensor({2, 3, 3}, 0.5f);
  CHECK_NOTHROW(img.validate());
  img.pixels[4] = -1.0f;
  CHECK_THROWS_AS(img.validate(), DataError);
  img.pixels = Tensor({3, 3});
  CHECK_THROWS(img.validate());
}

TEST_CASE("manifest round trip and filtering") {
  const fs::path dir = scratch("manifest");
  std::vector<CatalogEntry> entries{
      {"b", 5, 0.10, 0.95, "b5.msr"}, {"a", 2, 0.05, 0.90, "a2.msr"},
      {"a", 1, 0.30, 0.99, "a1.msr"}, {"a", 3, 0.00, 0.50, "a3.msr"},
      {"a", 0, 0.20, 0.80, "a0.msr"}, {"b", 4, 0.00, 1.00, "b4.msr"}};
  write_manifest(dir / "catalog.tsv", entries);
  std::vector<CatalogEntry> back = read_manifest(dir / "catalog.tsv");
  REQUIRE(back.size() == entries.size());
  CHECK(back[1].region_id == "a");
  CHECK(back[1].cloud_cover == 0.05);
  CHECK(fs::path(back[1].path).filename() == "a2.msr");

  const std::vector<CatalogEntry> kept = filter_catalog(entries);
  // a1 is cloudy, a3 poorly covered; the boundaries themselves are kept.
  REQUIRE(kept.size() == 4);
  CHECK(kept[0].path == "a0.msr");
  CHECK(kept[1].path == "a2.msr");
  CHECK(kept[2].path == "b4.msr");
  CHECK(kept[3].path == "b5.msr");

  CatalogFilter one;
  one.max_per_region = 1;
  const std::vector<CatalogEntry> first = filter_catalog(entries, one);
  REQUIRE(first.size() == 2);
  CHECK(first[0].timestamp == 0);
  CHECK(first[1].timestamp == 4);
}

TEST_CASE("malformed manifest lines are rejected") {
  const fs::path dir = scratch("manifest_bad");
  std::ofstream(dir / "m.tsv") << "# comment\nr\tnot-a-number\t0\t1\tx.msr\n";
  CHECK_THROWS_AS(read_manifest(dir / "m.tsv"), DataError);
}

TEST_CASE("tiling drops partial remainders") {
  MultiSpectralImage img;
  img.pixels = Tensor({1, 10, 15});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i);
  const std::vector<MultiSpectralImage> tiles = tile_image(img, 4);
  REQUIRE(tiles.size() == 2 * 3);
  CHECK(tiles[4].pixels.at(0, 0, 0) == img.pixels.at(0, 4, 4));
  CHECK(tiles[5].pixels.at(0, 3, 3) == img.pixels.at(0, 7, 11));
}

TEST_CASE("window extraction uses mirror padding") {
  Rng rng(32);
  const Tensor px = testutil::uniform({2, 6, 7}, rng, 0, 1);
  std::vector<float> buf(2 * 5 * 5);
  for (int y : {0, 2, 5})
    for (int x : {0, 3, 6}) {
      extract_window(px, y, x, 5, buf.data());
      for (int b = 0; b < 2; ++b)
        for (int a = 0; a < 5; ++a)
          for (int c = 0; c < 5; ++c)
            CHECK(buf[(b * 5 + a) * 5 + c] ==
                  px.at(b, testutil::mirror(y + a - 2, 6), testutil::mirror(x + c - 2, 7)));
    }
}

TEST_CASE("dense windows cover every pixel in row-major order") {
  Rng rng(33);
  MultiSpectralImage img;
  img.pixels = testutil::uniform({2, 4, 3}, rng, 0, 1);
  std::size_t n = 0;
  const Tensor batch = window_batch(img.pixels, 3, 0, 12);
  for (const auto& w : dense_windows(img, 3)) {
    CHECK(w.row == static_cast<int>(n / 3));
    CHECK(w.col == static_cast<int>(n % 3));
    CHECK(w.patch.at(0, 1, 1) == img.pixels.at(0, w.row, w.col));
    for (std::size_t i = 0; i < w.patch.size(); ++i) CHECK(batch[n * w.patch.size() + i] == w.patch[i]);
    ++n;
  }
  CHECK(n == 12);
}

TEST_CASE("synthetic generation is a pure function of its spec") {
  SynthSpec spec;
  spec.regions = 2;
  spec.timesteps = 3;
  spec.height = 24;
  spec.width = 24;
  spec.heldout_pairs = 1;
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  const SynthOutput oa = synth_generate(spec, a);
  const SynthOutput ob = synth_generate(spec, b);
  REQUIRE(oa.catalog.size() == 6);
  for (std::size_t i = 0; i < oa.catalog.size(); ++i)
    CHECK(slurp(oa.catalog[i].path) == slurp(ob.catalog[i].path));
  REQUIRE(oa.pairs.size() == 1);
  CHECK(slurp(oa.pairs[0].change) == slurp(ob.pairs[0].change));

  // Timesteps differ, texture layout does not.
  const Tensor t0 = read_raster(oa.catalog[0].path);
  const Tensor t1 = read_raster(oa.catalog[1].path);
  CHECK(!(t0 == t1));
  const std::vector<HeldoutPair> idx = read_heldout_index(a / "heldout");
  REQUIRE(idx.size() == 1);
  CHECK(idx[0].name == oa.pairs[0].name);

  // The change mask marks a non-empty strict subset of pixels.
  const Tensor change = read_raster(oa.pairs[0].change);
  double changed = 0;
  for (float v : change.values()) changed += v;
  CHECK(changed > 0);
  CHECK(changed < change.size());

  SynthSpec other = spec;
  other.seed = spec.seed + 1;
  const SynthOutput oc = synth_generate(other, scratch("synth_c"));
  CHECK(slurp(oa.catalog[0].path) != slurp(oc.catalog[0].path));
}

TEST_CASE("the held-out mosaic holds each texture in one comparable region") {
  SynthSpec spec;
  spec.regions = 2;
  spec.timesteps = 2;
  spec.heldout_pairs = 1;
  const SynthOutput out = synth_generate(spec, scratch("mosaic"));
  const Tensor labels = read_raster(out.mosaic_labels);
  const int h = spec.height, w = spec.width;
  const int classes = static_cast<int>(spec.textures.size());

  // Flood-fill the 4-connected components and count them per class.
  std::vector<int> seen(labels.size(), 0), components(classes, 0), area(classes, 0);
  for (int start = 0; start < h * w; ++start) {
    const int c = static_cast<int>(labels[start]);
    ++area[c];
    if (seen[start]) continue;
    ++components[c];
    std::vector<int> stack{start};
    seen[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int y = p / w, x = p % w;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& [ny, nx] : nb) {
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const int q = ny * w + nx;
        if (!seen[q] && static_cast<int>(labels[q]) == c) {
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
  }
  for (int c = 0; c < classes; ++c) {
    CAPTURE(c);
    CHECK(components[c] == 1);
    CHECK(area[c] > h * w / (2 * classes));
  }
}

TEST_CASE("triplets are aligned and come from distinct regions") {
  SynthSpec spec;
  spec.regions = 3;
  spec.timesteps = 3;
  spec.height = 21;
  spec.width = 21;
  spec.heldout_pairs = 0;
  const SynthOutput out = synth_generate(spec, scratch("triplets"));
  const Corpus corpus = Corpus::load(read_manifest(out.manifest));
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Triplet t = sample_triplet(corpus, s, 7);
    CHECK(t.anchor_region != t.negative_region);
    CHECK(t.anchor_time != t.positive_time);
    CHECK(t.patches() == 9);
    CHECK(t.anchor.shape() == std::vector<int>{9, 4, 7, 7});
    CHECK(t.positive.shape() == t.anchor.shape());
    CHECK(sample_triplet(corpus, s, 7) == t);
  }
  const Triplet capped = sample_triplet(corpus, 5, 7, 2);
  CHECK(capped.patches() == 2);
}

TEST_CASE("a single-region corpus cannot yield negatives") {
  SynthSpec spec;
  spec.regions = 1;
  spec.timesteps = 2;
  spec.height = 14;
  spec.width = 14;
  spec.heldout_pairs = 0;
  const SynthOutput out = synth_generate(spec, scratch("one_region"));
  const Corpus corpus = Corpus::load(read_manifest(out.manifest));
  CHECK_THROWS_AS(sample_triplet(corpus, 1, 7), DataError);
}

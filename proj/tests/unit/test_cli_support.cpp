#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "matter/checkpoint.hpp"
#include "matter/config.hpp"
#include "matter/errors.hpp"
#include "matter/image_io.hpp"

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

RunConfig small_run() {
  RunConfig c;
  c.backbone.stem_channels = 4;
  c.backbone.block_channels = {4, 8};
  c.backbone.descriptor_dim = 8;
  c.backbone.tern.blocks = 1;
  c.clusters = 5;
  return c;
}

}  // namespace

TEST_CASE("empty config gives the defaults") {
  const RunConfig c = parse_config_text("");
  CHECK(c.train.temperature == 0.05);
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.train.momentum == 0.6);
  CHECK(c.train.weight_decay == 0.001);
  CHECK(c.clusters == 64);
  CHECK(c.train.patch == 7);
  CHECK(c.infer_window == 9);
  CHECK(c.backbone.tern.blocks == 10);
}

TEST_CASE("config values, comments and errors") {
  const RunConfig c = parse_config_text(
      "# comment\nseed = 9\ntrain.patch = 17  # trailing\ntern.dilations = 1, 2, 3\n"
      "resenc.enabled = false\nsynth.textures = grating, noise\n");
  CHECK(c.seed == 9);
  CHECK(c.train.patch == 17);
  CHECK(c.backbone.tern.dilations == std::vector<int>{1, 2, 3});
  CHECK(!c.residual_encoder);
  CHECK(c.synth.textures.size() == 2);
  CHECK_THROWS_AS(parse_config_text("train.temperature = -1"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("no.such.key = 1"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("seed = 1\nseed = 2"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("train.patch = seven"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("train.patch"), ConfigError);
  try {
    parse_config_text("seed = 1\nbogus = 2\n", "run.cfg");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:2") != std::string::npos);
  }
}

TEST_CASE("serialised config reparses to an equal config") {
  RunConfig c = parse_config_text("seed = 3\ntrain.learning_rate = 0.0123456789\nsynth.gain_max = 1.7\n");
  CHECK(parse_config_text(serialize_config(c)) == c);
  for (const std::string& key : config_keys()) CHECK(serialize_config(c).find(key + " =") != std::string::npos);
}

TEST_CASE("overrides use the parser's validation") {
  RunConfig c;
  set_config_value(c, "train.iterations", "12");
  CHECK(c.train.iterations == 12);
  CHECK_THROWS_AS(set_config_value(c, "train.momentum", "x"), ConfigError);
  set_config_value(c, "train.momentum", "1.5");
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "nope", "1"), ConfigError);
}

TEST_CASE("model hash ignores budget and paths only") {
  RunConfig a, b;
  b.train.iterations = 5;
  b.paths.output = "elsewhere";
  CHECK(a.model_hash() == b.model_hash());
  b.train.learning_rate = 0.02;
  CHECK(a.model_hash() != b.model_hash());
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  const fs::path dir = scratch("ckpt");
  const RunConfig cfg = small_run();
  TrainState s = initial_state(cfg);
  s.iteration = 7;
  s.loss_history = {3.0f, 2.5f};
  s.sgd.velocity.clear();
  for (auto& [name, t] : s.model.trainable()) s.sgd.velocity.emplace_back(t->shape(), 0.25f);
  save_checkpoint(dir / "a.mtck", s, cfg);
  const LoadedCheckpoint l = load_checkpoint(dir / "a.mtck", &cfg);
  CHECK(l.state.iteration == 7);
  CHECK(l.state.loss_history == s.loss_history);
  CHECK(l.config == cfg);
  CHECK(l.config_hash == cfg.model_hash());
  save_checkpoint(dir / "b.mtck", l.state, l.config);
  CHECK(slurp(dir / "a.mtck") == slurp(dir / "b.mtck"));
}

TEST_CASE("damaged or foreign checkpoints are refused") {
  const fs::path dir = scratch("ckpt_bad");
  const RunConfig cfg = small_run();
  save_checkpoint(dir / "ok.mtck", initial_state(cfg), cfg);
  const std::string bytes = slurp(dir / "ok.mtck");

  std::ofstream(dir / "cut.mtck", std::ios::binary) << bytes.substr(0, bytes.size() - 10);
  try {
    load_checkpoint(dir / "cut.mtck");
    FAIL("expected truncation error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("truncat") != std::string::npos);
  }

  std::string magic = bytes;
  magic[0] = 'X';
  std::ofstream(dir / "magic.mtck", std::ios::binary) << magic;
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.mtck"), DataError);

  std::string version = bytes;
  version[4] = static_cast<char>(99);
  std::ofstream(dir / "version.mtck", std::ios::binary) << version;
  CHECK_THROWS_AS(load_checkpoint(dir / "version.mtck"), DataError);

  RunConfig other = cfg;
  other.train.temperature = 0.1;
  CHECK_THROWS_AS(load_checkpoint(dir / "ok.mtck", &other), DataError);
  CHECK_NOTHROW(load_checkpoint(dir / "ok.mtck", &other, true));
  other = cfg;
  other.train.iterations = 99;
  CHECK_NOTHROW(load_checkpoint(dir / "ok.mtck", &other));
}

TEST_CASE("png export") {
  const fs::path dir = scratch("png");
  Tensor m({3, 4});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = float(i);
  write_png_gray(dir / "g.png", m);
  write_png_heatmap(dir / "h.png", m.reshaped({1, 3, 4}));
  const std::string g = slurp(dir / "g.png");
  CHECK(g.substr(1, 3) == "PNG");
  WordMap w{2, 2, 3, {0, 1, 2, 1}};
  write_png_words(dir / "w.png", w, 5);
  CHECK(word_palette(3, 5) == word_palette(3, 5));
  w.words[0] = 7;
  CHECK_THROWS_AS(write_png_words(dir / "bad.png", w, 5), ShapeError);
  CHECK_THROWS_AS(write_png_gray(dir / "x.png", Tensor({2, 2, 2})), ShapeError);
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "matter/datapipe.hpp"
#include "matter/selfsup.hpp"
#include "matter/tasks.hpp"

namespace matter {

struct RunPaths {
  std::string catalog;
  std::string output = "out";
  std::string checkpoint;

  friend bool operator==(const RunPaths&, const RunPaths&) = default;
};

// Everything a run needs, parsed from `key = value` text. Seeds for
// initialisation and sampling are derived from `seed`.
struct RunConfig {
  std::uint64_t seed = 1;
  TrainConfig train;
  BackboneConfig backbone;
  int clusters = 64;
  bool residual_encoder = true;
  int infer_window = 9;
  SynthSpec synth;
  RunPaths paths;

  void validate() const;
  ModelSetup model_setup() const;
  TrainConfig train_config() const;
  // Identity of the trained model: every key that shapes parameters or the
  // optimisation trajectory, except the iteration budget, checkpoint cadence
  // and paths.
  std::uint64_t model_hash() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_config_text(std::string_view text, std::string_view origin = "<text>");
RunConfig parse_config(const std::filesystem::path& path);

// Sets one dotted key from its textual value with the parser's type rules
// (used for command-line overrides). Range checks happen in validate(), which
// callers run once after the last override.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

std::string serialize_config(const RunConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace matter

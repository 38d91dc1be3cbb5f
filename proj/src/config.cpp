#include "matter/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "matter/random.hpp"

namespace matter {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value,
                            const char* expected) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " +
                    std::string(key) + " (expected " + expected + ")");
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
    bad_value(key, v, "an integer");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
    bad_value(key, v, "a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> items;
  while (true) {
    const auto comma = v.find(',');
    items.push_back(trim(v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return items;
}

std::vector<int> parse_int_list(std::string_view key, std::string_view v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  for (auto item : split_list(v)) out.push_back(parse_int<int>(key, item));
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::string fmt_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  const char* key;
  bool hashed;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
};

#define MATTER_INT(name, member, hashed)                                          \
  Field{name, hashed, [](const RunConfig& c) { return std::to_string(c.member); }, \
        [](RunConfig& c, std::string_view k, std::string_view v) {                 \
          c.member = parse_int<decltype(c.member)>(k, v);                          \
        }}
#define MATTER_DOUBLE(name, member, hashed)                                    \
  Field{name, hashed, [](const RunConfig& c) { return fmt_double(c.member); }, \
        [](RunConfig& c, std::string_view k, std::string_view v) {              \
          c.member = parse_double(k, v);                                        \
        }}
#define MATTER_BOOL(name, member, hashed)                                    \
  Field{name, hashed, [](const RunConfig& c) { return fmt_bool(c.member); }, \
        [](RunConfig& c, std::string_view k, std::string_view v) {            \
          c.member = parse_bool(k, v);                                        \
        }}
#define MATTER_INTS(name, member, hashed)                                        \
  Field{name, hashed, [](const RunConfig& c) { return fmt_int_list(c.member); }, \
        [](RunConfig& c, std::string_view k, std::string_view v) {                \
          c.member = parse_int_list(k, v);                                        \
        }}
#define MATTER_STRING(name, member, hashed)                       \
  Field{name, hashed, [](const RunConfig& c) { return c.member; }, \
        [](RunConfig& c, std::string_view, std::string_view v) {   \
          c.member = std::string(v);                               \
        }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MATTER_INT("seed", seed, true),
      MATTER_INT("train.batch_size", train.batch_size, true),
      MATTER_DOUBLE("train.learning_rate", train.learning_rate, true),
      MATTER_DOUBLE("train.momentum", train.momentum, true),
      MATTER_DOUBLE("train.weight_decay", train.weight_decay, true),
      MATTER_DOUBLE("train.temperature", train.temperature, true),
      MATTER_INT("train.patch", train.patch, true),
      MATTER_INT("train.iterations", train.iterations, false),
      MATTER_INT("train.checkpoint_every", train.checkpoint_every, false),
      MATTER_INT("train.negatives_per_anchor", train.negatives_per_anchor, true),
      MATTER_INT("train.patches_per_triplet", train.patches_per_triplet, true),
      MATTER_DOUBLE("train.grad_clip", train.grad_clip, true),
      MATTER_INT("backbone.in_bands", backbone.in_bands, true),
      MATTER_INT("backbone.stem_channels", backbone.stem_channels, true),
      MATTER_INTS("backbone.block_channels", backbone.block_channels, true),
      MATTER_INT("backbone.descriptor_dim", backbone.descriptor_dim, true),
      MATTER_INT("tern.blocks", backbone.tern.blocks, true),
      MATTER_INT("tern.layers_per_block", backbone.tern.layers_per_block, true),
      MATTER_INT("tern.kernel_size", backbone.tern.kernel_size, true),
      MATTER_INTS("tern.dilations", backbone.tern.dilations, true),
      MATTER_DOUBLE("tern.epsilon", backbone.tern.epsilon, true),
      MATTER_BOOL("tern.normalize", backbone.tern.normalize, true),
      MATTER_INT("resenc.clusters", clusters, true),
      MATTER_BOOL("resenc.enabled", residual_encoder, true),
      MATTER_INT("infer.window", infer_window, false),
      MATTER_INT("synth.seed", synth.seed, false),
      MATTER_INT("synth.regions", synth.regions, false),
      MATTER_INT("synth.timesteps", synth.timesteps, false),
      MATTER_INT("synth.height", synth.height, false),
      MATTER_INT("synth.width", synth.width, false),
      MATTER_INT("synth.bands", synth.bands, false),
      Field{"synth.textures", false,
            [](const RunConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.synth.textures.size(); ++i) {
                if (i) out += ',';
                out += texture_name(c.synth.textures[i]);
              }
              return out;
            },
            [](RunConfig& c, std::string_view, std::string_view v) {
              c.synth.textures.clear();
              if (trim(v).empty()) return;
              for (auto item : split_list(v))
                c.synth.textures.push_back(parse_texture(std::string(item)));
            }},
      MATTER_DOUBLE("synth.gain_min", synth.gain_min, false),
      MATTER_DOUBLE("synth.gain_max", synth.gain_max, false),
      MATTER_DOUBLE("synth.noise_sigma", synth.noise_sigma, false),
      MATTER_INT("synth.segments", synth.segments, false),
      MATTER_INT("synth.heldout_pairs", synth.heldout_pairs, false),
      MATTER_STRING("paths.catalog", paths.catalog, false),
      MATTER_STRING("paths.output", paths.output, false),
      MATTER_STRING("paths.checkpoint", paths.checkpoint, false),
  };
  return table;
}

#undef MATTER_INT
#undef MATTER_DOUBLE
#undef MATTER_BOOL
#undef MATTER_INTS
#undef MATTER_STRING

const Field& find_field(std::string_view key) {
  for (const Field& f : fields())
    if (key == f.key) return f;
  throw ConfigError("unknown configuration key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  backbone.validate();
  if (clusters < 1) throw ConfigError("resenc.clusters must be positive");
  if (infer_window < 1 || infer_window % 2 == 0)
    throw ConfigError("infer.window must be a positive odd number");
  synth.validate();
}

ModelSetup RunConfig::model_setup() const {
  ModelSetup s;
  s.backbone = backbone;
  s.backbone.rng_seed = derive_seed(seed, "init.backbone");
  s.clusters = clusters;
  s.residual_encoder = residual_encoder;
  s.bank_seed = derive_seed(seed, "init.bank");
  return s;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.rng_seed = seed;
  return t;
}

std::uint64_t RunConfig::model_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const Field& f : fields()) {
    if (!f.hashed) continue;
    mix(f.key);
    mix("=");
    mix(f.get(*this));
    mix("\n");
  }
  return h;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  find_field(key).set(cfg, key, trim(value));
}

RunConfig parse_config_text(std::string_view text, std::string_view origin) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos)
      throw ConfigError(where + ": expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second)
      throw ConfigError(where + ": duplicate key '" + std::string(key) + "'");
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += '\n';
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.emplace_back(f.key);
  return keys;
}

}  // namespace matter

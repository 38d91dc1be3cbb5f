#include "matter/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace matter {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'C', 'K'};
constexpr std::uint32_t kMaxName = 4096;
constexpr std::uint32_t kMaxRank = 8;

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), 4);
}

class Reader {
 public:
  Reader(std::istream& in, std::string path, std::uintmax_t size)
      : in_(in), path_(std::move(path)), remaining_(size) {}

  void bytes(void* dst, std::size_t n, const char* what) {
    require(n, what);
    remaining_ -= n;
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw DataError("checkpoint " + path_ + " is truncated (while reading " + what + ")");
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    bytes(&v, 4, what);
    return to_le(v);
  }
  void require(std::uintmax_t n, const char* what) const {
    if (n > remaining_)
      throw DataError("checkpoint " + path_ + " is truncated (while reading " + what + ")");
  }
  bool at_end() const { return remaining_ == 0; }

 private:
  std::istream& in_;
  std::string path_;
  std::uintmax_t remaining_;
};

void put_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  } else {
    for (float v : t.values()) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
      put_u32(out, bits);
    }
  }
}

std::vector<std::pair<std::string, Tensor>> records_of(const TrainState& state) {
  TrainState copy = state;
  std::vector<std::pair<std::string, Tensor>> recs;
  for (auto& [name, t] : copy.model.params.named()) recs.emplace_back(name, *t);
  for (auto& [name, t] : copy.model.bank.named()) recs.emplace_back(name, *t);
  const auto trainable = copy.model.trainable();
  if (copy.sgd.velocity.size() != trainable.size())
    throw ShapeError("optimiser state does not match the trainable parameters");
  for (std::size_t i = 0; i < trainable.size(); ++i)
    recs.emplace_back("sgd.velocity." + trainable[i].first, copy.sgd.velocity[i]);
  recs.emplace_back("train.loss_history",
                    Tensor({static_cast<int>(copy.loss_history.size())},
                           copy.loss_history));
  return recs;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

}  // namespace

TrainState initial_state(const RunConfig& cfg) {
  cfg.validate();
  const ModelSetup setup = cfg.model_setup();
  const Model model = init_model(setup.backbone, setup.clusters,
                                 setup.residual_encoder, setup.bank_seed);
  return init_train_state(model, cfg.train_config());
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const RunConfig& cfg) {
  std::ostringstream meta;
  meta << "iteration=" << state.iteration << '\n'
       << "config_hash=" << hex64(cfg.model_hash()) << '\n'
       << "rng.seed=" << cfg.seed << '\n'
       << "rng.iteration=" << state.iteration << '\n'
       << "[config]\n"
       << serialize_config(cfg);
  const std::string header = meta.str();
  const auto recs = records_of(state);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    put_u32(out, static_cast<std::uint32_t>(recs.size()));
    for (const auto& [name, t] : recs) put_tensor(out, name, t);
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const RunConfig* expected, bool allow_mismatch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Reader rd(in, path.string(), std::filesystem::file_size(path));
  char magic[4];
  rd.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw DataError(path.string() + " is not a checkpoint (bad magic)");
  const std::uint32_t version = rd.u32("version");
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version " + std::to_string(version) +
                    " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t header_len = rd.u32("metadata length");
  std::string header(header_len, '\0');
  rd.bytes(header.data(), header_len, "metadata");

  const auto split = header.find("[config]\n");
  if (split == std::string::npos) throw DataError("checkpoint metadata lacks a config");
  std::map<std::string, std::string> meta;
  {
    std::istringstream ms(header.substr(0, split));
    std::string line;
    while (std::getline(ms, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  LoadedCheckpoint ck;
  ck.config = parse_config_text(std::string_view(header).substr(split + 9),
                                path.string() + "[config]");
  try {
    ck.config_hash = std::stoull(meta.at("config_hash"), nullptr, 16);
    ck.state = initial_state(ck.config);
    ck.state.iteration = std::stoi(meta.at("iteration"));
  } catch (const std::out_of_range&) {
    throw DataError("checkpoint metadata is incomplete");
  } catch (const std::invalid_argument&) {
    throw DataError("checkpoint metadata is malformed");
  }
  if (ck.config_hash != ck.config.model_hash())
    throw DataError("checkpoint metadata is inconsistent (config hash)");
  if (expected && expected->model_hash() != ck.config_hash && !allow_mismatch)
    throw DataError("checkpoint " + path.string() +
                    " was produced by a different configuration (hash " +
                    hex64(ck.config_hash) + ", expected " +
                    hex64(expected->model_hash()) + ")");

  std::map<std::string, Tensor*> slots;
  for (auto& [name, t] : ck.state.model.params.named()) slots[name] = t;
  for (auto& [name, t] : ck.state.model.bank.named()) slots[name] = t;
  const auto trainable = ck.state.model.trainable();
  for (std::size_t i = 0; i < trainable.size(); ++i)
    slots["sgd.velocity." + trainable[i].first] = &ck.state.sgd.velocity[i];
  Tensor history;
  slots["train.loss_history"] = &history;

  const std::uint32_t count = rd.u32("record count");
  if (count != slots.size())
    throw DataError("checkpoint holds " + std::to_string(count) +
                    " tensors, configuration expects " + std::to_string(slots.size()));
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint32_t name_len = rd.u32("tensor name length");
    if (name_len > kMaxName) throw DataError("checkpoint tensor name too long");
    std::string name(name_len, '\0');
    rd.bytes(name.data(), name_len, "tensor name");
    const auto slot = slots.find(name);
    if (slot == slots.end()) throw DataError("unexpected checkpoint tensor '" + name + "'");
    const std::uint32_t rank = rd.u32("tensor rank");
    if (rank > kMaxRank) throw DataError("checkpoint tensor rank too large");
    std::vector<int> shape;
    std::uintmax_t elements = 1;
    std::string shape_text;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t extent = rd.u32("tensor extents");
      if (extent > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
        throw DataError("checkpoint tensor extent too large");
      shape.push_back(static_cast<int>(extent));
      elements *= extent;
      shape_text += (d ? "," : "") + std::to_string(extent);
    }
    rd.require(elements * sizeof(float), "tensor payload");
    Tensor& dst = *slot->second;
    if (name == "train.loss_history") {
      if (rank != 1) throw DataError("loss history must be rank 1");
      dst = Tensor(shape);
    } else if (shape != dst.shape()) {
      throw DataError("checkpoint tensor '" + name + "' has shape [" + shape_text +
                      "], expected " + dst.shape_string());
    }
    rd.bytes(dst.data(), dst.size() * sizeof(float), "tensor payload");
    if constexpr (std::endian::native == std::endian::big)
      for (float& v : dst.values())
        v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
    slots.erase(slot);
  }
  if (!rd.at_end()) throw DataError("checkpoint has trailing bytes");
  ck.state.loss_history.assign(history.values().begin(), history.values().end());
  return ck;
}

}  // namespace matter

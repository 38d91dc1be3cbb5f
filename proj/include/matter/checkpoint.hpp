#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "matter/config.hpp"
#include "matter/selfsup.hpp"

namespace matter {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  RunConfig config;
  std::uint64_t config_hash = 0;
  TrainState state;
};

// Binary container: "MTCK", u32 version, u32 metadata length, UTF-8
// metadata, u32 record count, then per tensor: u32 name length, name,
// u32 rank, u32 extents, little-endian f32 payload.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const RunConfig& cfg);

// With `expected` set, a checkpoint whose model hash differs is refused
// unless allow_mismatch is true.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const RunConfig* expected = nullptr,
                                 bool allow_mismatch = false);

// Fresh state for a configuration (iteration 0, zero velocities).
TrainState initial_state(const RunConfig& cfg);

}  // namespace matter

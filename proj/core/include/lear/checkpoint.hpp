#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "lear/nn.hpp"

namespace lear {

/// FNV-1a over the raw bytes of every param (and state) tensor, in
/// registration order. Used for the parameter-partition freeze assertions.
std::uint64_t checksum(const ModuleState<float>& ms, bool include_state = true);

struct Manifest {
  int format_version = 1;
  std::string architecture_id;
  Shape input_shape;
  int class_count = 0;
  std::int64_t seed = 0;
  std::map<std::string, double> metrics;
};

/// Checkpoint = opaque float32 little-endian blob (params then state, in
/// registration order) + JSON manifest next to it.
void save_checkpoint(const std::string& path_base, const ModuleState<float>& ms,
                     const Manifest& manifest);
Manifest load_checkpoint(const std::string& path_base, ModuleState<float>& ms);
Manifest read_manifest(const std::string& path_base);
bool checkpoint_exists(const std::string& path_base);

}  // namespace lear

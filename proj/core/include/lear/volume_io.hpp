#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lear/tensor.hpp"

namespace lear {

/// Raw little-endian float32 volume with a JSON sidecar
/// {shape, dtype, subject_id, target_condition}.
struct VolumeSidecar {
  Shape shape;
  std::string dtype = "float32";
  std::string subject_id;
  std::vector<double> target_condition;  // empty when not applicable
};

/// Writes <path_base>.raw and <path_base>.json.
void write_volume(const std::string& path_base, const Tensor<float>& values,
                  const VolumeSidecar& sidecar);

struct LoadedVolume {
  Tensor<float> values;
  VolumeSidecar sidecar;
};

LoadedVolume read_volume(const std::string& path_base);

}  // namespace lear

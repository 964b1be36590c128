#include "lear/volume_io.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "lear/errors.hpp"

namespace lear {

using nlohmann::json;

void write_volume(const std::string& path_base, const Tensor<float>& values,
                  const VolumeSidecar& sidecar) {
  if (values.shape() != sidecar.shape)
    throw ShapeError("write_volume: sidecar shape disagrees with tensor");
  std::ofstream raw(path_base + ".raw", std::ios::binary);
  if (!raw) throw DataError("cannot write volume: " + path_base + ".raw");
  static_assert(sizeof(float) == 4);
  raw.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(sizeof(float) * values.numel()));
  raw.close();

  json j;
  j["shape"] = sidecar.shape;
  j["dtype"] = sidecar.dtype;
  j["subject_id"] = sidecar.subject_id;
  j["target_condition"] = sidecar.target_condition;
  std::ofstream side(path_base + ".json");
  if (!side) throw DataError("cannot write sidecar: " + path_base + ".json");
  side << j.dump(2) << "\n";
}

LoadedVolume read_volume(const std::string& path_base) {
  std::ifstream side(path_base + ".json");
  if (!side) throw DataError("missing sidecar: " + path_base + ".json");
  json j;
  try {
    side >> j;
  } catch (const json::exception& e) {
    throw DataError("sidecar parse error: " + std::string(e.what()));
  }
  LoadedVolume out;
  out.sidecar.shape = j.at("shape").get<Shape>();
  out.sidecar.dtype = j.value("dtype", "float32");
  out.sidecar.subject_id = j.value("subject_id", "");
  if (j.contains("target_condition"))
    out.sidecar.target_condition = j["target_condition"].get<std::vector<double>>();
  if (out.sidecar.dtype != "float32")
    throw DataError("unsupported volume dtype: " + out.sidecar.dtype);

  out.values = Tensor<float>(out.sidecar.shape);
  std::ifstream raw(path_base + ".raw", std::ios::binary);
  if (!raw) throw DataError("missing volume: " + path_base + ".raw");
  raw.read(reinterpret_cast<char*>(out.values.data()),
           static_cast<std::streamsize>(sizeof(float) * out.values.numel()));
  if (!raw) throw DataError("volume truncated: " + path_base + ".raw");
  return out;
}

}  // namespace lear

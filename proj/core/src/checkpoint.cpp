#include "lear/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lear/errors.hpp"

namespace lear {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t checksum(const ModuleState<float>& ms, bool include_state) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : ms.params)
    h = fnv1a(p->value.data(), sizeof(float) * static_cast<std::size_t>(p->value.numel()), h);
  if (include_state)
    for (const auto& [name, t] : ms.state)
      h = fnv1a(t->data(), sizeof(float) * static_cast<std::size_t>(t->numel()), h);
  return h;
}

void save_checkpoint(const std::string& path_base, const ModuleState<float>& ms,
                     const Manifest& manifest) {
  std::ofstream blob(path_base + ".blob", std::ios::binary);
  if (!blob) throw DataError("cannot write checkpoint blob: " + path_base + ".blob");
  std::int64_t count = 0;
  for (const auto* p : ms.params) {
    blob.write(reinterpret_cast<const char*>(p->value.data()),
               static_cast<std::streamsize>(sizeof(float) * p->value.numel()));
    count += p->value.numel();
  }
  for (const auto& [name, t] : ms.state) {
    blob.write(reinterpret_cast<const char*>(t->data()),
               static_cast<std::streamsize>(sizeof(float) * t->numel()));
    count += t->numel();
  }
  blob.close();

  json j;
  j["format_version"] = manifest.format_version;
  j["architecture_id"] = manifest.architecture_id;
  j["input_shape"] = manifest.input_shape;
  j["class_count"] = manifest.class_count;
  j["seed"] = manifest.seed;
  j["metrics"] = manifest.metrics;
  j["scalar_count"] = count;
  j["checksum"] = checksum(ms);
  std::ofstream mf(path_base + ".manifest.json");
  if (!mf) throw DataError("cannot write checkpoint manifest: " + path_base);
  mf << j.dump(2) << "\n";
}

bool checkpoint_exists(const std::string& path_base) {
  std::ifstream blob(path_base + ".blob", std::ios::binary);
  std::ifstream mf(path_base + ".manifest.json");
  return blob.good() && mf.good();
}

Manifest read_manifest(const std::string& path_base) {
  std::ifstream mf(path_base + ".manifest.json");
  if (!mf) throw MissingCheckpointError("missing checkpoint manifest: " + path_base);
  json j;
  try {
    mf >> j;
  } catch (const json::exception& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }
  Manifest m;
  m.format_version = j.value("format_version", 0);
  m.architecture_id = j.value("architecture_id", "");
  m.input_shape = j.value("input_shape", Shape{});
  m.class_count = j.value("class_count", 0);
  m.seed = j.value("seed", static_cast<std::int64_t>(0));
  if (j.contains("metrics"))
    for (auto it = j["metrics"].begin(); it != j["metrics"].end(); ++it)
      m.metrics[it.key()] = it.value().get<double>();
  return m;
}

Manifest load_checkpoint(const std::string& path_base, ModuleState<float>& ms) {
  Manifest m = read_manifest(path_base);
  std::ifstream blob(path_base + ".blob", std::ios::binary);
  if (!blob) throw MissingCheckpointError("missing checkpoint blob: " + path_base + ".blob");
  auto read_tensor = [&](Tensor<float>& t) {
    blob.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(sizeof(float) * t.numel()));
    if (!blob) throw DataError("checkpoint blob truncated: " + path_base);
  };
  for (auto* p : ms.params) read_tensor(p->value);
  for (auto& [name, t] : ms.state) read_tensor(*t);
  blob.peek();
  if (!blob.eof()) throw DataError("checkpoint blob has trailing bytes: " + path_base);
  return m;
}

}  // namespace lear

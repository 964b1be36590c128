#include "lear/hyperparams.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "lear/errors.hpp"

namespace lear {

using nlohmann::json;

HyperParams HyperParams::planar2d() { return HyperParams{}; }

HyperParams HyperParams::volumetric3d() {
  HyperParams h;
  h.lambda1 = 10;
  h.lambda2 = 10;
  h.lambda3 = 10;
  h.lambda4 = 5;
  h.lambda5 = 1;
  h.lambda6 = 1;
  h.lambda7 = 5e-6;
  h.lambda8 = 0.1;
  h.r = 4;
  h.lr_g = 1e-2;
  h.lr_d = 1e-2;
  h.lr_cls = 1e-4;
  h.lr_xga = 1e-4;
  h.epochs = 100;
  h.batch_size = 3;
  h.decay = 1.0;
  return h;
}

HyperParams HyperParams::profile(DomainTag tag) {
  return tag == DomainTag::planar2d ? planar2d() : volumetric3d();
}

HyperParams apply_stage_defaults(HyperParams h, DomainTag tag, Stage stage) {
  switch (stage) {
    case Stage::cmg:
      break;  // profile defaults are the CMG budgets
    case Stage::backbone:
      if (tag == DomainTag::planar2d) {
        h.epochs = 50;
        h.batch_size = 128;
      } else {
        h.epochs = 150;
        h.batch_size = 12;
      }
      h.decay = 0.98;
      break;
    case Stage::xga:
      h.epochs = 150;
      h.batch_size = 12;
      h.decay = 0.98;
      break;
  }
  return h;
}

void HyperParams::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0)) throw ConfigError(std::string(name) + " must be nonnegative");
  };
  nonneg(lambda1, "lambda1");
  nonneg(lambda2, "lambda2");
  nonneg(lambda3, "lambda3");
  nonneg(lambda4, "lambda4");
  nonneg(lambda5, "lambda5");
  nonneg(lambda6, "lambda6");
  nonneg(lambda7, "lambda7");
  nonneg(lambda8, "lambda8");
  if (r < 1) throw ConfigError("r must be a positive integer");
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(lr_g, "lr_g");
  positive(lr_d, "lr_d");
  positive(lr_cls, "lr_cls");
  positive(lr_xga, "lr_xga");
  if (!(adam_beta1 > 0 && adam_beta1 < 1) || !(adam_beta2 > 0 && adam_beta2 < 1))
    throw ConfigError("adam betas must lie in (0,1)");
  if (!(label_smoothing >= 0 && label_smoothing < 1))
    throw ConfigError("label_smoothing must lie in [0,1)");
  if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
  if (!(decay > 0 && decay <= 1)) throw ConfigError("decay must lie in (0,1]");
}

std::string HyperParams::to_json() const {
  json j;
  j["lambda1"] = lambda1;
  j["lambda2"] = lambda2;
  j["lambda3"] = lambda3;
  j["lambda4"] = lambda4;
  j["lambda5"] = lambda5;
  j["lambda6"] = lambda6;
  j["lambda7"] = lambda7;
  j["lambda8"] = lambda8;
  j["r"] = r;
  j["lr_g"] = lr_g;
  j["lr_d"] = lr_d;
  j["lr_cls"] = lr_cls;
  j["lr_xga"] = lr_xga;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["label_smoothing"] = label_smoothing;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["decay"] = decay;
  j["seed"] = seed;
  return j.dump(2);
}

HyperParams HyperParams::from_json(const std::string& text, const HyperParams& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a flat JSON object");

  HyperParams h = base;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    auto num = [&]() -> double {
      if (!v.is_number()) throw ConfigError("config key '" + k + "' must be a number");
      return v.get<double>();
    };
    auto integer = [&]() -> std::int64_t {
      if (!v.is_number_integer()) throw ConfigError("config key '" + k + "' must be an integer");
      return v.get<std::int64_t>();
    };
    if (k == "lambda1") h.lambda1 = num();
    else if (k == "lambda2") h.lambda2 = num();
    else if (k == "lambda3") h.lambda3 = num();
    else if (k == "lambda4") h.lambda4 = num();
    else if (k == "lambda5") h.lambda5 = num();
    else if (k == "lambda6") h.lambda6 = num();
    else if (k == "lambda7") h.lambda7 = num();
    else if (k == "lambda8") h.lambda8 = num();
    else if (k == "r") h.r = static_cast<int>(integer());
    else if (k == "lr_g") h.lr_g = num();
    else if (k == "lr_d") h.lr_d = num();
    else if (k == "lr_cls") h.lr_cls = num();
    else if (k == "lr_xga") h.lr_xga = num();
    else if (k == "adam_beta1") h.adam_beta1 = num();
    else if (k == "adam_beta2") h.adam_beta2 = num();
    else if (k == "label_smoothing") h.label_smoothing = num();
    else if (k == "epochs") h.epochs = static_cast<int>(integer());
    else if (k == "batch_size") h.batch_size = static_cast<int>(integer());
    else if (k == "decay") h.decay = num();
    else if (k == "seed") h.seed = integer();
    else throw ConfigError("unknown config key '" + k + "'");
  }
  h.validate();
  return h;
}

HyperParams HyperParams::load_file(const std::string& path, const HyperParams& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text, base);
}

}  // namespace lear

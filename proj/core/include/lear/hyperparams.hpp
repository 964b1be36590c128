#pragma once

#include <cstdint>
#include <string>

namespace lear {

enum class DomainTag { planar2d, volumetric3d };

enum class Stage { backbone, cmg, xga };

/// Training hyperparameters. Two named profiles seed the defaults; stage
/// defaults adjust epoch/batch/lr budgets per training stage; config files
/// override per key.
struct HyperParams {
  double lambda1 = 1, lambda2 = 0, lambda3 = 10, lambda4 = 1, lambda5 = 1, lambda6 = 1,
         lambda7 = 0, lambda8 = 0.1;
  int r = 4;  // attention shrink ratio
  double lr_g = 1e-3, lr_d = 1e-3, lr_cls = 5e-4, lr_xga = 1e-4;
  double adam_beta1 = 0.9, adam_beta2 = 0.999;
  double label_smoothing = 0.1;
  int epochs = 100, batch_size = 128;
  double decay = 0.98;  // per-epoch exponential learning-rate decay
  std::int64_t seed = 1;

  static HyperParams planar2d();
  static HyperParams volumetric3d();
  static HyperParams profile(DomainTag tag);

  void validate() const;  // throws ConfigError
  std::string to_json() const;

  /// Parses a flat JSON object whose keys are exactly the field names above.
  /// Missing keys keep the base value; unknown keys are rejected.
  static HyperParams from_json(const std::string& json_text, const HyperParams& base);
  static HyperParams load_file(const std::string& path, const HyperParams& base);
};

/// Per-stage epoch/batch/decay budgets (the CMG budgets are the profile
/// defaults; backbone and XGA stages carry their own).
HyperParams apply_stage_defaults(HyperParams base, DomainTag tag, Stage stage);

}  // namespace lear

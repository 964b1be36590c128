#pragma once

#include <array>
#include <vector>

#include "lear/data.hpp"
#include "lear/tensor.hpp"

namespace lear {

/// One class's lesion: an ellipsoidal intensity bump with a soft edge.
/// Geometry is given in volume fractions so the spec scales with the shape.
struct LesionSpec {
  std::array<double, 3> center = {0.5, 0.55, 0.45};
  std::array<double, 3> radii = {0.22, 0.18, 0.22};
  double delta = 0.0;  // peak intensity added inside the ellipsoid
};

/// Synthetic volumetric dataset with analytically known class differences:
/// sample = deform(template + lesion(class)) + noise, where the smooth
/// per-sample deformation is known, so exact ground-truth difference maps
/// deform(lesion(a) - lesion(b)) come for free.
struct PhantomSpec {
  Shape volume = {32, 38, 32};  // spatial extents; one channel is appended
  int class_count = 3;
  std::vector<LesionSpec> lesions;  // one per class, deltas strictly monotone
  double noise_std = 0.03;
  int samples_per_class = 100;
  std::uint64_t seed = 7;
  double deform_amplitude = 3.0;  // voxels of smooth displacement (plus 2x translation)
  int deform_grid = 4;            // control points per axis

  static PhantomSpec defaults();
  void validate() const;  // lesions inside the volume, monotone deltas
};

struct PhantomDataset {
  PhantomSpec spec;
  Dataset dataset;
  /// gt_maps[i][c]: exact noise-free map transforming sample i from its own
  /// class toward class c (empty tensor at c == own class).
  std::vector<std::vector<Tensor<float>>> gt_maps;
};

PhantomDataset generate_phantom(const PhantomSpec& spec);

/// Recomputes sample i's exact map toward class c from scratch (construction
/// oracle for tests).
Tensor<float> phantom_exact_map(const PhantomSpec& spec, int sample_index, int sample_class,
                                int target_class);

}  // namespace lear

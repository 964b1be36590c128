#include "lear/phantom.hpp"

#include <cmath>

#include "lear/errors.hpp"
#include "lear/rng.hpp"

namespace lear {

namespace {

struct Vol {
  std::int64_t X, Y, Z;
  std::vector<float> v;
  explicit Vol(const Shape& s)
      : X(s[0]), Y(s[1]), Z(s[2]), v(static_cast<std::size_t>(X * Y * Z), 0.0f) {}
  float& at(std::int64_t x, std::int64_t y, std::int64_t z) {
    return v[static_cast<std::size_t>((x * Y + y) * Z + z)];
  }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return v[static_cast<std::size_t>((x * Y + y) * Z + z)];
  }
  float sample(double x, double y, double z) const {  // clamped trilinear
    x = std::min(std::max(x, 0.0), static_cast<double>(X - 1));
    y = std::min(std::max(y, 0.0), static_cast<double>(Y - 1));
    z = std::min(std::max(z, 0.0), static_cast<double>(Z - 1));
    const auto x0 = static_cast<std::int64_t>(std::floor(x));
    const auto y0 = static_cast<std::int64_t>(std::floor(y));
    const auto z0 = static_cast<std::int64_t>(std::floor(z));
    const auto x1 = std::min(x0 + 1, X - 1);
    const auto y1 = std::min(y0 + 1, Y - 1);
    const auto z1 = std::min(z0 + 1, Z - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    const double fz = z - static_cast<double>(z0);
    double acc = 0;
    for (int cx = 0; cx < 2; ++cx)
      for (int cy = 0; cy < 2; ++cy)
        for (int cz = 0; cz < 2; ++cz) {
          const double w = (cx ? fx : 1 - fx) * (cy ? fy : 1 - fy) * (cz ? fz : 1 - fz);
          acc += w * at(cx ? x1 : x0, cy ? y1 : y0, cz ? z1 : z0);
        }
    return static_cast<float>(acc);
  }
};

Vol base_template(const Shape& sp) {
  Vol t(sp);
  const double cx = (sp[0] - 1) / 2.0, cy = (sp[1] - 1) / 2.0, cz = (sp[2] - 1) / 2.0;
  for (std::int64_t x = 0; x < t.X; ++x)
    for (std::int64_t y = 0; y < t.Y; ++y)
      for (std::int64_t z = 0; z < t.Z; ++z) {
        const double dx = (x - cx) / cx, dy = (y - cy) / cy, dz = (z - cz) / cz;
        const double r2 = dx * dx + dy * dy + dz * dz;
        // bright interior fading toward the boundary, plus two fixed blobs
        double v = 0.55 * std::exp(-1.2 * r2);
        v += 0.25 * std::exp(-18.0 * ((dx - 0.35) * (dx - 0.35) + dy * dy + dz * dz));
        v += 0.20 * std::exp(-14.0 * (dx * dx + (dy + 0.4) * (dy + 0.4) + dz * dz));
        t.at(x, y, z) = static_cast<float>(v);
      }
  return t;
}

Vol lesion_field(const Shape& sp, const LesionSpec& l) {
  Vol f(sp);
  if (l.delta == 0.0) return f;
  for (std::int64_t x = 0; x < f.X; ++x)
    for (std::int64_t y = 0; y < f.Y; ++y)
      for (std::int64_t z = 0; z < f.Z; ++z) {
        const double nx = (x / static_cast<double>(sp[0] - 1) - l.center[0]) / l.radii[0];
        const double ny = (y / static_cast<double>(sp[1] - 1) - l.center[1]) / l.radii[1];
        const double nz = (z / static_cast<double>(sp[2] - 1) - l.center[2]) / l.radii[2];
        const double rho2 = nx * nx + ny * ny + nz * nz;
        if (rho2 < 1.0) f.at(x, y, z) = static_cast<float>(l.delta * (1.0 - rho2));
      }
  return f;
}

// Smooth per-sample displacement: a coarse grid of random offsets,
// trilinearly interpolated over the volume (align-corners).
struct Deformation {
  Shape sp;
  int G;
  double amp;
  std::array<double, 3> shift = {0, 0, 0};  // whole-volume translation component
  std::vector<std::array<double, 3>> grid;  // G^3 nodes

  Deformation(const Shape& s, int g, double amplitude, Rng& rng) : sp(s), G(g), amp(amplitude) {
    for (int a = 0; a < 3; ++a)
      shift[static_cast<std::size_t>(a)] = rng.uniform_range(-2.0 * amp, 2.0 * amp);
    grid.resize(static_cast<std::size_t>(G) * G * G);
    for (auto& n : grid)
      for (int a = 0; a < 3; ++a) n[static_cast<std::size_t>(a)] = rng.uniform_range(-amp, amp);
  }

  std::array<double, 3> at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    const double gx = x * static_cast<double>(G - 1) / static_cast<double>(sp[0] - 1);
    const double gy = y * static_cast<double>(G - 1) / static_cast<double>(sp[1] - 1);
    const double gz = z * static_cast<double>(G - 1) / static_cast<double>(sp[2] - 1);
    const auto x0 = static_cast<std::int64_t>(std::floor(gx));
    const auto y0 = static_cast<std::int64_t>(std::floor(gy));
    const auto z0 = static_cast<std::int64_t>(std::floor(gz));
    const auto x1 = std::min<std::int64_t>(x0 + 1, G - 1);
    const auto y1 = std::min<std::int64_t>(y0 + 1, G - 1);
    const auto z1 = std::min<std::int64_t>(z0 + 1, G - 1);
    const double fx = gx - static_cast<double>(x0);
    const double fy = gy - static_cast<double>(y0);
    const double fz = gz - static_cast<double>(z0);
    std::array<double, 3> out = {0, 0, 0};
    for (int cx = 0; cx < 2; ++cx)
      for (int cy = 0; cy < 2; ++cy)
        for (int cz = 0; cz < 2; ++cz) {
          const double w = (cx ? fx : 1 - fx) * (cy ? fy : 1 - fy) * (cz ? fz : 1 - fz);
          const auto& n = grid[static_cast<std::size_t>(
              ((cx ? x1 : x0) * G + (cy ? y1 : y0)) * G + (cz ? z1 : z0))];
          for (int a = 0; a < 3; ++a) out[static_cast<std::size_t>(a)] += w * n[static_cast<std::size_t>(a)];
        }
    return out;
  }

  Vol warp(const Vol& f) const {
    Vol out(sp);
    for (std::int64_t x = 0; x < out.X; ++x)
      for (std::int64_t y = 0; y < out.Y; ++y)
        for (std::int64_t z = 0; z < out.Z; ++z) {
          const auto u = at(x, y, z);
          out.at(x, y, z) =
              f.sample(x + shift[0] + u[0], y + shift[1] + u[1], z + shift[2] + u[2]);
        }
    return out;
  }
};

Tensor<float> to_tensor(const Vol& v, const Shape& sp) {
  Tensor<float> t({sp[0], sp[1], sp[2], 1});
  std::copy(v.v.begin(), v.v.end(), t.data());
  return t;
}

}  // namespace

PhantomSpec PhantomSpec::defaults() {
  PhantomSpec s;
  s.lesions.resize(3);
  for (auto& l : s.lesions) l.radii = {0.2, 0.16, 0.2};
  s.lesions[0].delta = 0.0;
  s.lesions[1].delta = 0.35;
  s.lesions[2].delta = 0.7;
  return s;
}

void PhantomSpec::validate() const {
  if (volume.size() != 3) throw ConfigError("phantom: volume must be 3-D");
  for (auto d : volume)
    if (d < 8) throw ConfigError("phantom: volume extent too small");
  if (class_count < 2) throw ConfigError("phantom: need >= 2 classes");
  if (static_cast<int>(lesions.size()) != class_count)
    throw ConfigError("phantom: one lesion spec per class required");
  for (const auto& l : lesions)
    for (int a = 0; a < 3; ++a) {
      if (l.radii[static_cast<std::size_t>(a)] <= 0)
        throw ConfigError("phantom: nonpositive lesion radius");
      if (l.center[static_cast<std::size_t>(a)] - l.radii[static_cast<std::size_t>(a)] < 0.0 ||
          l.center[static_cast<std::size_t>(a)] + l.radii[static_cast<std::size_t>(a)] > 1.0)
        throw ConfigError("phantom: lesion extends outside the volume");
    }
  for (std::size_t k = 1; k < lesions.size(); ++k)
    if (!(lesions[k].delta > lesions[k - 1].delta))
      throw ConfigError("phantom: lesion deltas must be strictly monotone in class index");
  if (noise_std < 0) throw ConfigError("phantom: negative noise std");
  if (samples_per_class < 1) throw ConfigError("phantom: samples_per_class must be positive");
  if (deform_grid < 2) throw ConfigError("phantom: deform_grid must be >= 2");
  if (deform_amplitude < 0) throw ConfigError("phantom: negative deform amplitude");
}

PhantomDataset generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Shape& sp = spec.volume;
  Vol tmpl = base_template(sp);
  std::vector<Vol> lesions;
  lesions.reserve(spec.lesions.size());
  for (const auto& l : spec.lesions) lesions.push_back(lesion_field(sp, l));

  PhantomDataset out;
  out.spec = spec;
  out.dataset.domain = DomainTag::volumetric3d;
  out.dataset.num_classes = spec.class_count;

  Rng root(spec.seed);
  const int total = spec.class_count * spec.samples_per_class;
  for (int i = 0; i < total; ++i) {
    const int cls = i % spec.class_count;
    Rng srng = root.fork(static_cast<std::uint64_t>(i) + 1);
    Deformation def(sp, spec.deform_grid, spec.deform_amplitude, srng);

    Vol source(sp);
    for (std::size_t j = 0; j < source.v.size(); ++j)
      source.v[j] = tmpl.v[j] + lesions[static_cast<std::size_t>(cls)].v[j];
    Vol warped = def.warp(source);
    for (auto& v : warped.v) v += static_cast<float>(spec.noise_std * srng.normal());

    LabeledSample s;
    s.image.values = to_tensor(warped, sp);
    s.image.domain = DomainTag::volumetric3d;
    s.label = one_hot(cls, spec.class_count);
    s.id = "s" + std::to_string(i) + "_c" + std::to_string(cls);
    out.dataset.samples.push_back(std::move(s));

    std::vector<Tensor<float>> maps(static_cast<std::size_t>(spec.class_count));
    for (int c = 0; c < spec.class_count; ++c) {
      if (c == cls) continue;
      Vol delta(sp);
      for (std::size_t j = 0; j < delta.v.size(); ++j)
        delta.v[j] = lesions[static_cast<std::size_t>(c)].v[j] -
                     lesions[static_cast<std::size_t>(cls)].v[j];
      maps[static_cast<std::size_t>(c)] = to_tensor(def.warp(delta), sp);
    }
    out.gt_maps.push_back(std::move(maps));
  }
  return out;
}

Tensor<float> phantom_exact_map(const PhantomSpec& spec, int sample_index, int sample_class,
                                int target_class) {
  spec.validate();
  const Shape& sp = spec.volume;
  Rng root(spec.seed);
  Rng srng = root.fork(static_cast<std::uint64_t>(sample_index) + 1);
  Deformation def(sp, spec.deform_grid, spec.deform_amplitude, srng);
  Vol la = lesion_field(sp, spec.lesions[static_cast<std::size_t>(sample_class)]);
  Vol lb = lesion_field(sp, spec.lesions[static_cast<std::size_t>(target_class)]);
  Vol delta(sp);
  for (std::size_t j = 0; j < delta.v.size(); ++j) delta.v[j] = lb.v[j] - la.v[j];
  return to_tensor(def.warp(delta), sp);
}

}  // namespace lear

#include "lear/data.hpp"

#include <algorithm>
#include <numeric>

#include "lear/errors.hpp"
#include "lear/rng.hpp"

namespace lear {

void ImageTensor::validate() const {
  const int want_rank = domain == DomainTag::planar2d ? 3 : 4;
  if (values.rank() != want_rank)
    throw ShapeError("ImageTensor: rank " + std::to_string(values.rank()) + " does not match domain");
  if (!all_finite(values)) throw ArgumentError("ImageTensor: non-finite entries");
}

Tensor<float> stack_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ArgumentError("stack_batch: empty index list");
  const auto& first = ds.samples[indices[0]].image.values;
  Shape shape;
  shape.push_back(static_cast<std::int64_t>(indices.size()));
  for (auto d : first.shape()) shape.push_back(d);
  Tensor<float> out(shape);
  const std::int64_t per = first.numel();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& img = ds.samples[indices[i]].image.values;
    if (img.numel() != per) throw ShapeError("stack_batch: inhomogeneous sample shapes");
    std::copy(img.data(), img.data() + per, out.data() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

Tensor<float> stack_images(const std::vector<const Tensor<float>*>& images) {
  if (images.empty()) throw ArgumentError("stack_images: empty list");
  Shape shape;
  shape.push_back(static_cast<std::int64_t>(images.size()));
  for (auto d : images[0]->shape()) shape.push_back(d);
  Tensor<float> out(shape);
  const std::int64_t per = images[0]->numel();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->numel() != per) throw ShapeError("stack_images: inhomogeneous shapes");
    std::copy(images[i]->data(), images[i]->data() + per,
              out.data() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

Tensor<float> stack_labels(const Dataset& ds, const std::vector<std::size_t>& indices) {
  Tensor<float> out({static_cast<std::int64_t>(indices.size()), ds.num_classes});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& probs = ds.samples[indices[i]].label.probs;
    if (static_cast<int>(probs.size()) != ds.num_classes)
      throw ShapeError("stack_labels: label length mismatch");
    for (int c = 0; c < ds.num_classes; ++c)
      out[static_cast<std::int64_t>(i) * ds.num_classes + c] = static_cast<float>(probs[static_cast<std::size_t>(c)]);
  }
  return out;
}

void split_train_val(std::size_t n, double val_fraction, std::uint64_t seed,
                     std::vector<std::size_t>& train, std::vector<std::size_t>& val) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed ^ 0x5eedf00dULL);
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
  const auto n_val = static_cast<std::size_t>(static_cast<double>(n) * val_fraction);
  val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
}

}  // namespace lear

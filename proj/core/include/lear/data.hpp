#pragma once

#include <string>
#include <vector>

#include "lear/condition.hpp"
#include "lear/hyperparams.hpp"
#include "lear/tensor.hpp"

namespace lear {

/// Normalized input sample X: spatial dims then channel dim, channel last.
struct ImageTensor {
  Tensor<float> values;  // [sp..., C], no batch dim
  DomainTag domain = DomainTag::planar2d;

  int spatial_rank() const { return values.rank() - 1; }
  void validate() const;
};

struct LabeledSample {
  ImageTensor image;
  TargetCondition label;  // one-hot ground truth
  std::string id;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  int num_classes = 0;
  DomainTag domain = DomainTag::planar2d;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// Stacks samples[indices] into one [N, sp..., C] batch tensor.
Tensor<float> stack_batch(const Dataset& ds, const std::vector<std::size_t>& indices);
Tensor<float> stack_images(const std::vector<const Tensor<float>*>& images);

/// One-hot label rows for the same indices: [N, num_classes].
Tensor<float> stack_labels(const Dataset& ds, const std::vector<std::size_t>& indices);

/// Deterministic, seed-fixed train/validation split (fraction to validation).
void split_train_val(std::size_t n, double val_fraction, std::uint64_t seed,
                     std::vector<std::size_t>& train, std::vector<std::size_t>& val);

}  // namespace lear

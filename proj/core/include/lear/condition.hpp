#pragma once

#include <vector>

#include "lear/rng.hpp"
#include "lear/tensor.hpp"

namespace lear {

/// Probability vector over the class space: target labels t, posteriors t',
/// and interpolated conditions. Entries are nonnegative and sum to 1.
struct TargetCondition {
  std::vector<double> probs;

  TargetCondition() = default;
  explicit TargetCondition(std::vector<double> p) : probs(std::move(p)) {}

  int size() const { return static_cast<int>(probs.size()); }
  bool is_one_hot() const;
  int arg_max() const;
  void validate() const;  // throws ArgumentError on violation

  template <typename T>
  Tensor<T> as_tensor() const {
    Tensor<T> t({static_cast<std::int64_t>(probs.size())});
    for (std::size_t i = 0; i < probs.size(); ++i) t[static_cast<std::int64_t>(i)] = static_cast<T>(probs[i]);
    return t;
  }
};

TargetCondition one_hot(int class_index, int num_classes);

/// (1-alpha)*a + alpha*b. Exact (bitwise) at the endpoints.
TargetCondition interpolate_condition(const TargetCondition& a, const TargetCondition& b,
                                      double alpha);

/// One-hot target drawn uniformly over all classes (the drawn class may equal
/// the sample's true label).
TargetCondition sample_uniform_target(int num_classes, Rng& rng);

}  // namespace lear

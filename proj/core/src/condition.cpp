#include "lear/condition.hpp"

#include <cmath>

#include "lear/errors.hpp"

namespace lear {

bool TargetCondition::is_one_hot() const {
  int ones = 0;
  for (double p : probs) {
    if (p == 1.0)
      ++ones;
    else if (p != 0.0)
      return false;
  }
  return ones == 1;
}

int TargetCondition::arg_max() const {
  int best = 0;
  for (int i = 1; i < size(); ++i)
    if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
  return best;
}

void TargetCondition::validate() const {
  if (probs.empty()) throw ArgumentError("TargetCondition: empty");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ArgumentError("TargetCondition: negative or NaN entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw ArgumentError("TargetCondition: entries sum to " + std::to_string(sum));
}

TargetCondition one_hot(int class_index, int num_classes) {
  if (num_classes < 1 || class_index < 0 || class_index >= num_classes)
    throw ArgumentError("one_hot: index " + std::to_string(class_index) + " out of range [0," +
                        std::to_string(num_classes) + ")");
  TargetCondition t;
  t.probs.assign(static_cast<std::size_t>(num_classes), 0.0);
  t.probs[static_cast<std::size_t>(class_index)] = 1.0;
  return t;
}

TargetCondition interpolate_condition(const TargetCondition& a, const TargetCondition& b,
                                      double alpha) {
  if (a.size() != b.size()) throw ArgumentError("interpolate_condition: length mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ArgumentError("interpolate_condition: alpha outside [0,1]");
  if (alpha == 0.0) return a;
  if (alpha == 1.0) return b;
  TargetCondition out;
  out.probs.resize(a.probs.size());
  for (std::size_t i = 0; i < a.probs.size(); ++i)
    out.probs[i] = (1.0 - alpha) * a.probs[i] + alpha * b.probs[i];
  return out;
}

TargetCondition sample_uniform_target(int num_classes, Rng& rng) {
  if (num_classes < 2) throw ArgumentError("sample_uniform_target: need >= 2 classes");
  return one_hot(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(num_classes))),
                 num_classes);
}

}  // namespace lear

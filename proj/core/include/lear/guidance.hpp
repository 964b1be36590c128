#pragma once

#include <string>
#include <vector>

#include "lear/data.hpp"
#include "lear/tensor.hpp"

namespace lear {

/// M_guide = MinMax(|M_first| + |M_last|), scaled into [0,1] over all voxels.
/// A constant combined map (no spatial information) yields all zeros.
Tensor<float> build_guidance(const Tensor<float>& m_first, const Tensor<float>& m_last);

enum class GtDirection { plus, minus };

struct GroundTruthMap {
  Tensor<float> values;
  GtDirection direction = GtDirection::plus;
  std::string baseline_id, target_id;
};

/// Plus-direction map = baseline - target (add it to the target image to
/// recover the baseline). The minus map is its negation.
GroundTruthMap ground_truth_map(const ImageTensor& baseline, const ImageTensor& target);
GroundTruthMap negated(const GroundTruthMap& m);

/// Normalized cross-correlation: mean of the product of standardized
/// entries (population std). Result lies in [-1,1]. Throws
/// UndefinedScoreError when either operand has std <= 1e-12.
double ncc(const Tensor<float>& a, const Tensor<float>& b);
double ncc(const Tensor<double>& a, const Tensor<double>& b);

struct NccReport {
  struct Row {
    std::string scenario;  // e.g. "c0<->c2"
    std::string direction; // "+" or "-"
    int n = 0;
    double mean = 0;
  };
  std::vector<Row> rows;

  std::string to_csv() const;
  std::string to_json() const;
  const Row* find(const std::string& scenario, const std::string& direction) const;
  double overall_mean(const std::string& direction) const;
};

/// One generated map matched with its ground-truth map: the map transforms
/// subject_id from source_class toward target_class.
struct DirectionalEntry {
  std::string subject_id;
  int source_class = 0;
  int target_class = 0;
  Tensor<float> cf_map;
  Tensor<float> gt_map;  // same transform direction as cf_map
};

/// Groups matched pairs by unordered class scenario; maps toward the
/// lower-indexed (healthier) class report under "+", the reverse under "-".
NccReport directional_ncc(const std::vector<DirectionalEntry>& entries);

/// Fraction of argmax matches between one-hot labels and probability rows.
double accuracy(const std::vector<int>& labels, const Tensor<float>& probability_rows);

/// Macro-averaged one-vs-rest AUC. Classes absent from the labels are
/// skipped with a warning.
double mauc(const std::vector<int>& labels, const Tensor<float>& probability_rows);

}  // namespace lear

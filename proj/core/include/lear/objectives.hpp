#pragma once

#include <fstream>
#include <string>

#include "lear/graph.hpp"
#include "lear/hyperparams.hpp"

namespace lear {

/// Cycle consistency: batch mean of the per-sample voxel-sum L1 distance.
template <typename T>
Var<T> loss_cyc(Graph<T>& g, Var<T> x, Var<T> x_prime);

/// Least-squares discriminator loss with one-sided label smoothing on the
/// real target: mean((real-(1-s))^2) + (mean(fake1^2)+mean(fake2^2))/2.
template <typename T>
Var<T> loss_adv_d(Graph<T>& g, Var<T> score_real, Var<T> score_fake1, Var<T> score_fake2,
                  T smoothing);

/// Least-squares generator loss: (mean((f1-1)^2)+mean((f2-1)^2))/2.
template <typename T>
Var<T> loss_adv_g(Graph<T>& g, Var<T> score_fake1, Var<T> score_fake2);

/// Anisotropic total variation of the transformed image: absolute forward
/// differences along each spatial axis, boundary terms omitted; batch mean.
template <typename T>
Var<T> loss_tv(Graph<T>& g, Var<T> x_tilde);

/// Per-sample L1 voxel sum of the map, batch mean (unweighted).
template <typename T>
Var<T> map_l1(Graph<T>& g, Var<T> m);

/// Per-sample unsquared Euclidean norm of the flattened map, batch mean.
template <typename T>
Var<T> map_l2(Graph<T>& g, Var<T> m);

/// Elastic map regularizer: lambda1*||M||_1 + lambda2*||M||_2, batch mean.
template <typename T>
Var<T> loss_map(Graph<T>& g, Var<T> m, T lambda1, T lambda2);

/// Cross-entropy of target condition rows against softmax probabilities
/// (probabilities clamped at 1e-12), batch mean. target: constant [N,C].
template <typename T>
Var<T> loss_cls(Graph<T>& g, Var<T> target, Var<T> probs);

/// Per-step component values and their Eq-style bundled total.
struct LossBreakdown {
  double cyc = 0, adv_g = 0, adv_d = 0, tv = 0, map_l1 = 0, map_l2 = 0, cls = 0, total = 0;
};

/// Populates total = l3*adv_g + l4*adv_d + l5*cyc + l6*cls + l7*tv
///                 + (l1*map_l1 + l2*map_l2) from unweighted components.
LossBreakdown loss_cmg_total(double cyc, double adv_g, double adv_d, double tv,
                             double map_l1_val, double map_l2_val, double cls,
                             const HyperParams& params);

class LossCsvWriter {
 public:
  explicit LossCsvWriter(const std::string& path);
  void row(std::int64_t step, const LossBreakdown& b);

 private:
  std::ofstream out_;
};

extern template Var<float> loss_cyc(Graph<float>&, Var<float>, Var<float>);
extern template Var<double> loss_cyc(Graph<double>&, Var<double>, Var<double>);
extern template Var<float> loss_adv_d(Graph<float>&, Var<float>, Var<float>, Var<float>, float);
extern template Var<double> loss_adv_d(Graph<double>&, Var<double>, Var<double>, Var<double>,
                                       double);
extern template Var<float> loss_adv_g(Graph<float>&, Var<float>, Var<float>);
extern template Var<double> loss_adv_g(Graph<double>&, Var<double>, Var<double>);
extern template Var<float> loss_tv(Graph<float>&, Var<float>);
extern template Var<double> loss_tv(Graph<double>&, Var<double>);
extern template Var<float> map_l1(Graph<float>&, Var<float>);
extern template Var<double> map_l1(Graph<double>&, Var<double>);
extern template Var<float> map_l2(Graph<float>&, Var<float>);
extern template Var<double> map_l2(Graph<double>&, Var<double>);
extern template Var<float> loss_map(Graph<float>&, Var<float>, float, float);
extern template Var<double> loss_map(Graph<double>&, Var<double>, double, double);
extern template Var<float> loss_cls(Graph<float>&, Var<float>, Var<float>);
extern template Var<double> loss_cls(Graph<double>&, Var<double>, Var<double>);

}  // namespace lear

#include "lear/objectives.hpp"

#include <cmath>

#include "lear/errors.hpp"

namespace lear {

template <typename T>
Var<T> loss_cyc(Graph<T>& g, Var<T> x, Var<T> x_prime) {
  if (!x->value.same_shape(x_prime->value)) throw ShapeError("loss_cyc: shape mismatch");
  return g.mean_all(g.sum_per_sample(g.abs_(g.sub(x_prime, x))));
}

template <typename T>
Var<T> loss_adv_d(Graph<T>& g, Var<T> score_real, Var<T> score_fake1, Var<T> score_fake2,
                  T smoothing) {
  if (!(smoothing >= T(0) && smoothing < T(1)))
    throw ArgumentError("loss_adv_d: smoothing outside [0,1)");
  auto real_term = g.mean_all(g.square_(g.add_scalar(score_real, -(T(1) - smoothing))));
  auto fake_term =
      g.scale(g.add(g.mean_all(g.square_(score_fake1)), g.mean_all(g.square_(score_fake2))),
              T(0.5));
  return g.add(real_term, fake_term);
}

template <typename T>
Var<T> loss_adv_g(Graph<T>& g, Var<T> score_fake1, Var<T> score_fake2) {
  auto t1 = g.mean_all(g.square_(g.add_scalar(score_fake1, T(-1))));
  auto t2 = g.mean_all(g.square_(g.add_scalar(score_fake2, T(-1))));
  return g.scale(g.add(t1, t2), T(0.5));
}

template <typename T>
Var<T> loss_tv(Graph<T>& g, Var<T> x_tilde) {
  const int rank = x_tilde->value.rank();
  const int S = rank - 2;
  if (S != 2 && S != 3) throw ShapeError("loss_tv: spatial rank must be 2 or 3");
  Var<T> acc;
  for (int axis = 1; axis <= S; ++axis) {
    const std::int64_t ext = x_tilde->value.dim(axis);
    if (ext < 2) continue;
    auto hi = g.slice_axis(x_tilde, axis, 1, ext - 1);
    auto lo = g.slice_axis(x_tilde, axis, 0, ext - 1);
    auto term = g.sum_per_sample(g.abs_(g.sub(hi, lo)));
    acc = acc ? g.add(acc, term) : term;
  }
  if (!acc) return g.constant(Tensor<T>({1}));
  return g.mean_all(acc);
}

template <typename T>
Var<T> map_l1(Graph<T>& g, Var<T> m) {
  return g.mean_all(g.sum_per_sample(g.abs_(m)));
}

template <typename T>
Var<T> map_l2(Graph<T>& g, Var<T> m) {
  return g.mean_all(g.sqrt_(g.sum_per_sample(g.square_(m))));
}

template <typename T>
Var<T> loss_map(Graph<T>& g, Var<T> m, T lambda1, T lambda2) {
  if (lambda1 < T(0) || lambda2 < T(0)) throw ArgumentError("loss_map: negative weight");
  return g.add(g.scale(map_l1(g, m), lambda1), g.scale(map_l2(g, m), lambda2));
}

template <typename T>
Var<T> loss_cls(Graph<T>& g, Var<T> target, Var<T> probs) {
  if (!target->value.same_shape(probs->value)) throw ShapeError("loss_cls: length mismatch");
  return g.scale(
      g.mean_all(g.sum_per_sample(g.mul(target, g.log_clamped(probs, T(1e-12))))), T(-1));
}

LossBreakdown loss_cmg_total(double cyc, double adv_g, double adv_d, double tv,
                             double map_l1_val, double map_l2_val, double cls,
                             const HyperParams& p) {
  LossBreakdown b;
  b.cyc = cyc;
  b.adv_g = adv_g;
  b.adv_d = adv_d;
  b.tv = tv;
  b.map_l1 = map_l1_val;
  b.map_l2 = map_l2_val;
  b.cls = cls;
  b.total = p.lambda3 * adv_g + p.lambda4 * adv_d + p.lambda5 * cyc + p.lambda6 * cls +
            p.lambda7 * tv + p.lambda1 * map_l1_val + p.lambda2 * map_l2_val;
  return b;
}

LossCsvWriter::LossCsvWriter(const std::string& path) : out_(path) {
  if (!out_) throw DataError("cannot open loss log: " + path);
  out_ << "step,cyc,adv_g,adv_d,tv,map_l1,map_l2,cls,total\n";
}

void LossCsvWriter::row(std::int64_t step, const LossBreakdown& b) {
  out_.precision(10);
  out_ << step << ',' << b.cyc << ',' << b.adv_g << ',' << b.adv_d << ',' << b.tv << ','
       << b.map_l1 << ',' << b.map_l2 << ',' << b.cls << ',' << b.total << '\n';
  out_.flush();
}

template Var<float> loss_cyc(Graph<float>&, Var<float>, Var<float>);
template Var<double> loss_cyc(Graph<double>&, Var<double>, Var<double>);
template Var<float> loss_adv_d(Graph<float>&, Var<float>, Var<float>, Var<float>, float);
template Var<double> loss_adv_d(Graph<double>&, Var<double>, Var<double>, Var<double>, double);
template Var<float> loss_adv_g(Graph<float>&, Var<float>, Var<float>);
template Var<double> loss_adv_g(Graph<double>&, Var<double>, Var<double>);
template Var<float> loss_tv(Graph<float>&, Var<float>);
template Var<double> loss_tv(Graph<double>&, Var<double>);
template Var<float> map_l1(Graph<float>&, Var<float>);
template Var<double> map_l1(Graph<double>&, Var<double>);
template Var<float> map_l2(Graph<float>&, Var<float>);
template Var<double> map_l2(Graph<double>&, Var<double>);
template Var<float> loss_map(Graph<float>&, Var<float>, float, float);
template Var<double> loss_map(Graph<double>&, Var<double>, double, double);
template Var<float> loss_cls(Graph<float>&, Var<float>, Var<float>);
template Var<double> loss_cls(Graph<double>&, Var<double>, Var<double>);

}  // namespace lear

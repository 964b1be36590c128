#include "lear/nn.hpp"

#include <cmath>

namespace lear {

template <typename T>
void glorot_uniform(Tensor<T>& w, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  T* p = w.data();
  for (std::int64_t i = 0; i < w.numel(); ++i)
    p[i] = static_cast<T>(rng.uniform_range(-limit, limit));
}

template <typename T>
void ConvLayer<T>::init(std::string name, int spatial_rank, std::int64_t cin,
                        std::int64_t cout, std::vector<int> k, std::vector<int> s, Rng& rng,
                        std::vector<int> dil, PadMode p, bool bias) {
  in_ch = cin;
  out_ch = cout;
  kernel = std::move(k);
  stride = std::move(s);
  dilation = dil.empty() ? std::vector<int>(static_cast<std::size_t>(spatial_rank), 1)
                         : std::move(dil);
  pad = p;
  use_bias = bias;
  std::int64_t taps = 1;
  for (auto kk : kernel) taps *= kk;
  w = Param<T>(name + ".w", Tensor<T>({taps * cin, cout}));
  glorot_uniform(w.value, taps * cin, taps * cout, rng);
  if (use_bias) b = Param<T>(name + ".b", Tensor<T>({cout}));
}

template <typename T>
Var<T> ConvLayer<T>::forward(Graph<T>& g, Var<T> x) const {
  Shape in_sp(x->value.shape().begin() + 1, x->value.shape().end() - 1);
  ConvGeom geom = pad == PadMode::same ? same_padding(in_sp, kernel, stride, dilation)
                                       : valid_padding(kernel, stride, dilation);
  Var<T> bias = use_bias ? g.param(const_cast<Param<T>&>(b)) : Var<T>();
  return g.conv(x, g.param(const_cast<Param<T>&>(w)), bias, geom);
}

template <typename T>
void ConvTransposeLayer<T>::init(std::string name, int spatial_rank, std::int64_t cin,
                                 std::int64_t cout, std::vector<int> k, std::vector<int> s,
                                 Rng& rng) {
  (void)spatial_rank;
  in_ch = cin;
  out_ch = cout;
  kernel = std::move(k);
  stride = std::move(s);
  std::int64_t taps = 1;
  for (auto kk : kernel) taps *= kk;
  w = Param<T>(name + ".w", Tensor<T>({taps * cout, cin}));
  glorot_uniform(w.value, taps * cin, taps * cout, rng);
  b = Param<T>(name + ".b", Tensor<T>({cout}));
}

template <typename T>
Var<T> ConvTransposeLayer<T>::forward(Graph<T>& g, Var<T> x) const {
  Shape in_sp(x->value.shape().begin() + 1, x->value.shape().end() - 1);
  Shape out_sp = in_sp;
  for (std::size_t a = 0; a < out_sp.size(); ++a) out_sp[a] *= stride[a];
  std::vector<int> dil(kernel.size(), 1);
  ConvGeom adjoint = same_padding(out_sp, kernel, stride, dil);
  return g.conv_transpose(x, g.param(const_cast<Param<T>&>(w)),
                          g.param(const_cast<Param<T>&>(b)), adjoint, out_sp);
}

template <typename T>
void BatchNormLayer<T>::init(std::string name, std::int64_t ch) {
  gamma = Param<T>(name + ".gamma", Tensor<T>::full({ch}, T(1)));
  beta = Param<T>(name + ".beta", Tensor<T>({ch}));
  run_mean = Tensor<T>({ch});
  run_var = Tensor<T>::full({ch}, T(1));
}

template <typename T>
Var<T> BatchNormLayer<T>::forward(Graph<T>& g, Var<T> x) {
  const bool batch_stats = g.train_mode && !frozen;
  return g.batchnorm(x, g.param(gamma), g.param(beta), run_mean, run_var, batch_stats,
                     batch_stats, momentum, eps);
}

template <typename T>
void DenseLayer<T>::init(std::string name, std::int64_t d, std::int64_t u, Rng& rng) {
  w = Param<T>(name + ".w", Tensor<T>({d, u}));
  glorot_uniform(w.value, d, u, rng);
  b = Param<T>(name + ".b", Tensor<T>({u}));
}

template <typename T>
Var<T> DenseLayer<T>::forward(Graph<T>& g, Var<T> x) const {
  auto y = g.matmul(x, g.param(const_cast<Param<T>&>(w)));
  auto bias = g.broadcast_to(
      g.reshape(g.param(const_cast<Param<T>&>(b)), {1, b.value.numel()}), y->value.shape());
  return g.add(y, bias);
}

template <typename T>
Adam<T>::Adam(std::vector<Param<T>*> params, T beta1, T beta2, T eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params)
    slots_.push_back(Slot{p, Tensor<T>(p->value.shape()), Tensor<T>(p->value.shape())});
}

template <typename T>
void Adam<T>::step(T lr) {
  ++t_;
  const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
  const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
  for (auto& s : slots_) {
    if (!s.p->trainable) continue;
    const T* g = s.p->grad.data();
    T* m = s.m.data();
    T* v = s.v.data();
    T* w = s.p->value.data();
    const std::int64_t n = s.p->value.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
      const T mh = m[i] / bc1;
      const T vh = v[i] / bc2;
      w[i] -= lr * mh / (std::sqrt(vh) + eps_);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& s : slots_) s.p->grad.fill(T(0));
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;
template struct ConvTransposeLayer<float>;
template struct ConvTransposeLayer<double>;
template struct BatchNormLayer<float>;
template struct BatchNormLayer<double>;
template struct DenseLayer<float>;
template struct DenseLayer<double>;
template class Adam<float>;
template class Adam<double>;
template void glorot_uniform<float>(Tensor<float>&, std::int64_t, std::int64_t, Rng&);
template void glorot_uniform<double>(Tensor<double>&, std::int64_t, std::int64_t, Rng&);

}  // namespace lear

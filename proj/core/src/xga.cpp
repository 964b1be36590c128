#include "lear/xga.hpp"

#include <cstdio>

#include "lear/errors.hpp"

namespace lear {

template <typename T>
Var<T> channel_descriptor(Graph<T>& g, Var<T> u) {
  return g.gap(u);
}

template <typename T>
Var<T> compress_attention(Graph<T>& g, Var<T> a) {
  return g.sqrt_(g.sum_axis_keep(g.square_(a), a->value.rank() - 1));
}

Tensor<float> resize_guidance(const Tensor<float>& m_guide, const Shape& target_spatial) {
  for (auto d : target_spatial)
    if (d < 1) throw ShapeError("resize_guidance: nonpositive target extent");
  Graph<float> g;
  g.grad_enabled = false;
  Tensor<float> batched = m_guide;
  bool added_batch = false;
  if (m_guide.rank() == static_cast<int>(target_spatial.size()) + 1) {
    Shape s = {1};
    for (auto d : m_guide.shape()) s.push_back(d);
    batched = m_guide.reshaped(s);
    added_batch = true;
  }
  auto out = g.resize_linear(g.constant(batched), target_spatial);
  Tensor<float> v = out->value;
  if (added_batch) {
    Shape s(v.shape().begin() + 1, v.shape().end());
    v = v.reshaped(s);
  }
  return v;
}

template <typename T>
void XgaModule<T>::init(const std::string& name, int rank, std::int64_t C, int ratio,
                        Rng& rng) {
  if (ratio < 1 || C % ratio != 0)
    throw ConfigError("xga: shrink ratio " + std::to_string(ratio) +
                      " does not divide channel count " + std::to_string(C));
  channels = C;
  r = ratio;
  const std::int64_t Cr = C / ratio;
  w_c_shrink = Param<T>(name + ".w_c_shrink", Tensor<T>({C, Cr}));
  glorot_uniform(w_c_shrink.value, C, Cr, rng);
  w_expand = Param<T>(name + ".w_expand", Tensor<T>({Cr, C}));
  glorot_uniform(w_expand.value, Cr, C, rng);

  auto ones = std::vector<int>(static_cast<std::size_t>(rank), 1);
  w_d_shrink.init(name + ".w_d_shrink", rank, C, Cr, ones, ones, rng, {}, PadMode::same,
                  false);
  w_collapse.init(name + ".w_collapse", rank, Cr, 1, ones, ones, rng, {}, PadMode::same,
                  false);
  auto threes = std::vector<int>(static_cast<std::size_t>(rank), 3);
  auto twos = std::vector<int>(static_cast<std::size_t>(rank), 2);
  w_reduction.init(name + ".w_reduction", rank, C, C, threes, twos, rng, twos, PadMode::same,
                   false);
}

template <typename T>
void XgaModule<T>::collect(ModuleState<T>& ms) {
  ms.add(w_c_shrink);
  ms.add(w_expand);
  w_d_shrink.collect(ms);
  w_collapse.collect(ms);
  w_reduction.collect(ms);
}

template <typename T>
Var<T> XgaModule<T>::global_attention(Graph<T>& g, Var<T> d) const {
  auto h = g.relu(g.matmul(d, g.param(const_cast<Param<T>&>(w_c_shrink))));
  return g.matmul(h, g.param(const_cast<Param<T>&>(w_expand)));
}

template <typename T>
Var<T> XgaModule<T>::local_attention(Graph<T>& g, Var<T> u) const {
  return w_collapse.forward(g, g.relu(w_d_shrink.forward(g, u)));
}

template <typename T>
Var<T> XgaModule<T>::contextual_attention(Graph<T>& g, Var<T> u) const {
  Shape sp(u->value.shape().begin() + 1, u->value.shape().end() - 1);
  auto reduced = g.relu(w_reduction.forward(g, u));
  return g.resize_linear(reduced, sp);
}

template <typename T>
Var<T> XgaModule<T>::fuse(Graph<T>& g, Var<T> gvec, Var<T> s, Var<T> uprime) const {
  // gvec [N,C] and s [N,sp,1] broadcast against U' [N,sp,C]
  const int rank = uprime->value.rank();
  Shape grow = {gvec->value.dim(0)};
  for (int a = 1; a < rank - 1; ++a) grow.push_back(1);
  grow.push_back(gvec->value.dim(1));
  auto gterm = g.mul_bcast(uprime, g.reshape(gvec, grow));
  auto sterm = g.mul_bcast(uprime, s);
  return g.sigmoid_(g.add(gterm, sterm));
}

template <typename T>
Var<T> XgaModule<T>::attention_mask(Graph<T>& g, Var<T> u) const {
  auto d = channel_descriptor(g, u);
  auto gvec = global_attention(g, d);
  auto s = local_attention(g, u);
  auto uprime = contextual_attention(g, u);
  return fuse(g, gvec, s, uprime);
}

template <typename T>
Var<T> modulate(Graph<T>& g, Var<T> u, Var<T> a) {
  if (!u->value.same_shape(a->value)) throw ShapeError("modulate: shape mismatch");
  return g.relu(g.add(u, g.mul(u, a)));
}

template <typename T>
void XgaBank<T>::build(const BackboneSpec& spec, int ratio, Rng& rng) {
  modules.clear();
  const auto chans = spec.block_channels();
  modules.resize(chans.size());
  for (std::size_t i = 0; i < chans.size(); ++i)
    modules[i].init("xga" + std::to_string(i), spec.spatial_rank(), chans[i], ratio, rng);
  last_attention.assign(chans.size(), Var<T>());
}

template <typename T>
void XgaBank<T>::collect(ModuleState<T>& ms) {
  for (auto& m : modules) m.collect(ms);
}

template <typename T>
Var<T> XgaBank<T>::apply(Graph<T>& g, int block_index, Var<T> u) {
  auto& mod = modules[static_cast<std::size_t>(block_index)];
  auto a = mod.attention_mask(g, u);
  if (record_attention) last_attention[static_cast<std::size_t>(block_index)] = a;
  return modulate(g, u, a);
}

template <typename T>
std::string XgaBank<T>::architecture_id(const BackboneSpec& spec) const {
  return "xga/" + spec.architecture_id() + "/r" +
         std::to_string(modules.empty() ? 0 : modules[0].r);
}

template <typename T>
Var<T> xga_penalty(Graph<T>& g, const std::vector<Var<T>>& compressed_attention,
                   const std::vector<Tensor<T>>& resized_guidance) {
  if (compressed_attention.size() != resized_guidance.size())
    throw ShapeError("xga_penalty: layer count mismatch");
  static int degenerate_warnings = 0;

  Var<T> omega;
  for (std::size_t l = 0; l < compressed_attention.size(); ++l) {
    auto a = compressed_attention[l];
    if (!a->value.same_shape(resized_guidance[l]))
      throw ShapeError("xga_penalty: layer " + std::to_string(l) + " shape mismatch");
    const std::int64_t N = a->value.dim(0);

    auto m = g.constant(resized_guidance[l]);
    auto na = g.sqrt_(g.sum_per_sample(g.square_(a)));
    auto nm = g.sqrt_(g.sum_per_sample(g.square_(m)));

    // degenerate norms contribute nothing (no direction to compare)
    Tensor<T> mask({N});
    bool any_degenerate = false;
    for (std::int64_t n = 0; n < N; ++n) {
      const bool ok = na->value[n] >= T(1e-8) && nm->value[n] >= T(1e-8);
      mask[n] = ok ? T(1) : T(0);
      any_degenerate |= !ok;
    }
    if (any_degenerate && degenerate_warnings < 10) {
      std::fprintf(stderr, "[xga] warning: degenerate attention/guidance norm at layer %zu\n",
                   l);
      ++degenerate_warnings;
    }

    Shape bshape = {N};
    for (int i = 1; i < a->value.rank(); ++i) bshape.push_back(1);
    auto unit_a = g.mul_bcast(a, g.reshape(g.recip_guarded(na, T(1e-8)), bshape));
    auto unit_m = g.mul_bcast(m, g.reshape(g.recip_guarded(nm, T(1e-8)), bshape));
    auto dist = g.sqrt_(g.sum_per_sample(g.square_(g.sub(unit_m, unit_a))));
    auto layer_term = g.mean_all(g.mul(dist, g.constant(mask)));
    omega = omega ? g.add(omega, layer_term) : layer_term;
  }
  if (!omega) return g.constant(Tensor<T>({1}));
  return omega;
}

template <typename T>
Var<T> loss_xga(Graph<T>& g, Var<T> y_rows, Var<T> probs, Var<T> omega, T lambda8) {
  if (lambda8 < T(0)) throw ArgumentError("loss_xga: negative lambda8");
  return g.add(loss_cls(g, y_rows, probs), g.scale(omega, lambda8));
}

template struct XgaModule<float>;
template struct XgaModule<double>;
template struct XgaBank<float>;
template struct XgaBank<double>;
template Var<float> channel_descriptor(Graph<float>&, Var<float>);
template Var<double> channel_descriptor(Graph<double>&, Var<double>);
template Var<float> compress_attention(Graph<float>&, Var<float>);
template Var<double> compress_attention(Graph<double>&, Var<double>);
template Var<float> modulate(Graph<float>&, Var<float>, Var<float>);
template Var<double> modulate(Graph<double>&, Var<double>, Var<double>);
template Var<float> xga_penalty(Graph<float>&, const std::vector<Var<float>>&,
                                const std::vector<Tensor<float>>&);
template Var<double> xga_penalty(Graph<double>&, const std::vector<Var<double>>&,
                                 const std::vector<Tensor<double>>&);
template Var<float> loss_xga(Graph<float>&, Var<float>, Var<float>, Var<float>, float);
template Var<double> loss_xga(Graph<double>&, Var<double>, Var<double>, Var<double>, double);

}  // namespace lear

#pragma once

#include <vector>

#include "lear/backbone.hpp"
#include "lear/graph.hpp"
#include "lear/nn.hpp"
#include "lear/objectives.hpp"

namespace lear {

/// Per-site channel mean: [N,sp...,C] -> [N,C].
template <typename T>
Var<T> channel_descriptor(Graph<T>& g, Var<T> u);

/// Per-site Euclidean norm across channels: [N,sp...,C] -> [N,sp...,1].
template <typename T>
Var<T> compress_attention(Graph<T>& g, Var<T> a);

/// Linear (bilinear/trilinear, align-corners) resample of a guidance map to
/// a layer's spatial extent.
Tensor<float> resize_guidance(const Tensor<float>& m_guide, const Shape& target_spatial);

/// One attention module injected next to a conv block of channel count C:
/// global (squeeze-excite), local (two pointwise convs), and contextual
/// (dilated conv + upscale) branches fused into a sigmoid mask.
template <typename T>
struct XgaModule {
  std::int64_t channels = 0;
  int r = 4;
  Param<T> w_c_shrink;  // [C, C/r]
  Param<T> w_expand;    // [C/r, C]
  ConvLayer<T> w_d_shrink;   // 1x1(x1), C -> C/r
  ConvLayer<T> w_collapse;   // 1x1(x1), C/r -> 1
  ConvLayer<T> w_reduction;  // k3, dilation 2, stride 2, C -> C

  void init(const std::string& name, int rank, std::int64_t C, int ratio, Rng& rng);
  void collect(ModuleState<T>& ms);

  Var<T> global_attention(Graph<T>& g, Var<T> d) const;      // [N,C] -> [N,C]
  Var<T> local_attention(Graph<T>& g, Var<T> u) const;       // [N,sp,C] -> [N,sp,1]
  Var<T> contextual_attention(Graph<T>& g, Var<T> u) const;  // [N,sp,C] -> [N,sp,C]
  Var<T> fuse(Graph<T>& g, Var<T> gvec, Var<T> s, Var<T> uprime) const;  // mask A
  Var<T> attention_mask(Graph<T>& g, Var<T> u) const;
};

/// U_out = ReLU(U + U*A).
template <typename T>
Var<T> modulate(Graph<T>& g, Var<T> u, Var<T> a);

/// Attention modules for every conv block of a backbone; acts as the
/// injection hook during forward passes and records each block's mask.
template <typename T>
struct XgaBank : LayerHook<T> {
  std::vector<XgaModule<T>> modules;
  std::vector<Var<T>> last_attention;  // per block, refreshed each forward
  bool record_attention = false;

  void build(const BackboneSpec& spec, int ratio, Rng& rng);
  void collect(ModuleState<T>& ms);
  Var<T> apply(Graph<T>& g, int block_index, Var<T> u) override;
  std::string architecture_id(const BackboneSpec& spec) const;
};

/// Attention-guidance penalty: sum over layers of the batch-mean L2 distance
/// between unit-normalized compressed attention and the resized guidance
/// map. Layers (per sample) with a degenerate norm (< 1e-8) contribute 0.
template <typename T>
Var<T> xga_penalty(Graph<T>& g, const std::vector<Var<T>>& compressed_attention,
                   const std::vector<Tensor<T>>& resized_guidance);

/// CE(y, probs) + lambda8 * Omega.
template <typename T>
Var<T> loss_xga(Graph<T>& g, Var<T> y_rows, Var<T> probs, Var<T> omega, T lambda8);

extern template struct XgaModule<float>;
extern template struct XgaModule<double>;
extern template struct XgaBank<float>;
extern template struct XgaBank<double>;
extern template Var<float> channel_descriptor(Graph<float>&, Var<float>);
extern template Var<double> channel_descriptor(Graph<double>&, Var<double>);
extern template Var<float> compress_attention(Graph<float>&, Var<float>);
extern template Var<double> compress_attention(Graph<double>&, Var<double>);
extern template Var<float> modulate(Graph<float>&, Var<float>, Var<float>);
extern template Var<double> modulate(Graph<double>&, Var<double>, Var<double>);
extern template Var<float> xga_penalty(Graph<float>&, const std::vector<Var<float>>&,
                                       const std::vector<Tensor<float>>&);
extern template Var<double> xga_penalty(Graph<double>&, const std::vector<Var<double>>&,
                                        const std::vector<Tensor<double>>&);
extern template Var<float> loss_xga(Graph<float>&, Var<float>, Var<float>, Var<float>, float);
extern template Var<double> loss_xga(Graph<double>&, Var<double>, Var<double>, Var<double>,
                                     double);

}  // namespace lear

#pragma once

#include <vector>

#include "lear/backbone.hpp"
#include "lear/graph.hpp"
#include "lear/nn.hpp"

namespace lear {

inline constexpr double kLReluSlope = 0.2;

/// Tiles condition rows [N,|Y|] to [N, spatial..., |Y|].
template <typename T>
Var<T> tile_condition(Graph<T>& g, Var<T> t_rows, const Shape& spatial);

/// Skip conditioning: LReLU(Conv(F ++ Tile(t))), spatial shape preserved,
/// output channels equal the skip's channels. The volumetric bottleneck
/// variant carries batch normalization before the activation.
template <typename T>
struct SkipConditioner {
  ConvLayer<T> conv;
  BatchNormLayer<T> bn;
  bool has_bn = false;

  void init(const std::string& name, int rank, std::int64_t feat_ch, int class_count,
            Rng& rng, bool with_bn);
  Var<T> apply(Graph<T>& g, Var<T> feat, Var<T> t_rows);
  void collect(ModuleState<T>& ms) {
    conv.collect(ms);
    if (has_bn) bn.collect(ms);
  }
};

/// Counterfactual map generator: U-Net style decoder over the frozen
/// encoder's feature pyramid with condition-informed skip connections.
template <typename T>
struct GeneratorModel {
  DomainTag domain = DomainTag::planar2d;
  int class_count = 0;
  bool bottleneck_separate = false;  // volumetric: bottleneck below deepest tap
  Shape input_spatial;
  std::int64_t out_ch = 1;

  std::vector<SkipConditioner<T>> tap_cond;  // ENC1..ENCK order
  SkipConditioner<T> bottleneck_cond;

  struct Stage {
    int tap_index = 0;
    bool has_dec = false;
    ConvLayer<T> dec;
    BatchNormLayer<T> dec_bn;
    std::vector<ConvLayer<T>> post;
    std::vector<BatchNormLayer<T>> post_bn;
  };
  std::vector<Stage> stages;  // deepest tap first

  bool final_deconv = false;  // planar profile: transposed conv, tanh
  ConvTransposeLayer<T> deconv;
  ConvLayer<T> final_conv;
  BatchNormLayer<T> final_bn;

  void build(const BackboneSpec& spec, int classes, Rng& rng);
  void collect(ModuleState<T>& ms);

  /// Decodes a counterfactual map from the conditioned pyramid. Output shape
  /// [N, input_spatial..., out_ch]; planar profile output lies in [-1,1].
  Var<T> forward(Graph<T>& g, const FeaturePyramid<T>& pyr, Var<T> t_rows);

  std::string architecture_id() const;
};

/// Adversarial critic: conv stack with a scalar linear head.
template <typename T>
struct DiscriminatorModel {
  DomainTag domain = DomainTag::planar2d;
  Shape input_spatial;
  std::int64_t in_ch = 1;

  struct Block {
    ConvLayer<T> conv;
    BatchNormLayer<T> bn;
    bool has_bn = true;
    bool pool_after = false;
    std::vector<int> pool_kernel, pool_stride;
  };
  std::vector<Block> blocks;
  DenseLayer<T> fc;

  void build(DomainTag tag, const Shape& input_spatial, std::int64_t in_ch, Rng& rng);
  /// Tiny custom stack for gradient-check tests.
  void build_tiny(const Shape& input_spatial, std::int64_t ch, Rng& rng);
  void collect(ModuleState<T>& ms);

  /// x: [N, sp..., C] -> scores [N, 1], one unbounded real per sample.
  Var<T> forward(Graph<T>& g, Var<T> x);

  std::string architecture_id() const;
};

template <typename T>
struct MapResult {
  Var<T> map;
  FeaturePyramid<T> pyramid;
  ClassifierOutput<T> out;
};

/// M_{X,t}: encoder pyramid (frozen weights; hook = attention injection from
/// the second LEAR iteration onward) decoded under target condition t.
template <typename T>
MapResult<T> generate_map(Graph<T>& g, BackboneModel<T>& encoder, LayerHook<T>* hook,
                          GeneratorModel<T>& gen, Var<T> x, Var<T> t_rows);

/// X~ = X + M, plain elementwise addition, no clipping.
template <typename T>
Var<T> transform(Graph<T>& g, Var<T> x, Var<T> m);

template <typename T>
struct CycleResult {
  Var<T> x_tilde, x_prime;
  Var<T> map1, map2;
  ClassifierOutput<T> out_x;        // posterior of the original input
  ClassifierOutput<T> out_x_tilde;  // posterior of the transformed image
};

/// X~ = X + M_{X,t}; X' = X~ + M_{X~, R(X)} with the second map conditioned
/// on the soft posterior of the original input.
template <typename T>
CycleResult<T> cycle_reconstruct(Graph<T>& g, BackboneModel<T>& encoder, LayerHook<T>* hook,
                                 GeneratorModel<T>& gen, Var<T> x, Var<T> t_rows);

template <typename T>
MapResult<T> generate_map(Graph<T>& g, BackboneModel<T>& encoder, GeneratorModel<T>& gen,
                          Var<T> x, Var<T> t_rows) {
  return generate_map(g, encoder, static_cast<LayerHook<T>*>(nullptr), gen, x, t_rows);
}

template <typename T>
CycleResult<T> cycle_reconstruct(Graph<T>& g, BackboneModel<T>& encoder,
                                 GeneratorModel<T>& gen, Var<T> x, Var<T> t_rows) {
  return cycle_reconstruct(g, encoder, static_cast<LayerHook<T>*>(nullptr), gen, x, t_rows);
}

extern template struct SkipConditioner<float>;
extern template struct SkipConditioner<double>;
extern template struct GeneratorModel<float>;
extern template struct GeneratorModel<double>;
extern template struct DiscriminatorModel<float>;
extern template struct DiscriminatorModel<double>;
extern template Var<float> tile_condition(Graph<float>&, Var<float>, const Shape&);
extern template Var<double> tile_condition(Graph<double>&, Var<double>, const Shape&);
extern template MapResult<float> generate_map(Graph<float>&, BackboneModel<float>&,
                                              LayerHook<float>*, GeneratorModel<float>&,
                                              Var<float>, Var<float>);
extern template MapResult<double> generate_map(Graph<double>&, BackboneModel<double>&,
                                               LayerHook<double>*, GeneratorModel<double>&,
                                               Var<double>, Var<double>);
extern template Var<float> transform(Graph<float>&, Var<float>, Var<float>);
extern template Var<double> transform(Graph<double>&, Var<double>, Var<double>);
extern template CycleResult<float> cycle_reconstruct(Graph<float>&, BackboneModel<float>&,
                                                     LayerHook<float>*, GeneratorModel<float>&,
                                                     Var<float>, Var<float>);
extern template CycleResult<double> cycle_reconstruct(Graph<double>&, BackboneModel<double>&,
                                                      LayerHook<double>*,
                                                      GeneratorModel<double>&, Var<double>,
                                                      Var<double>);

}  // namespace lear

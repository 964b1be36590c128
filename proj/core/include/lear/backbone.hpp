#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lear/checkpoint.hpp"
#include "lear/data.hpp"
#include "lear/graph.hpp"
#include "lear/nn.hpp"

namespace lear {

struct ConvBlockSpec {
  std::int64_t out_ch = 0;
  std::vector<int> kernel, stride;
  bool batch_norm = true;
  std::string tap;  // "ENC1".."ENC4" or empty
  bool pool_after = false;
  std::vector<int> pool_kernel, pool_stride;
};

enum class HeadKind { flatten_fc, gap_fc };

/// Diagnostic-model architecture: a conv stack with tapped skip layers
/// feeding the counterfactual generator, plus a classifier head.
struct BackboneSpec {
  DomainTag domain = DomainTag::planar2d;
  Shape input_spatial;  // e.g. {28,28} or {96,114,96}
  std::int64_t in_ch = 1;
  int class_count = 10;
  std::vector<ConvBlockSpec> blocks;
  HeadKind head = HeadKind::flatten_fc;
  std::int64_t fc_hidden = 128;  // flatten_fc only
  double dropout1 = 0.5, dropout2 = 0.25;

  static BackboneSpec planar2d(Shape input_spatial = {28, 28}, int classes = 10);
  static BackboneSpec volumetric3d(Shape input_spatial = {96, 114, 96}, int classes = 3);
  /// Minimal two-block planar spec for gradient-check tests.
  static BackboneSpec tiny(Shape input_spatial, int classes, std::int64_t ch);

  int spatial_rank() const { return static_cast<int>(input_spatial.size()); }
  /// Spatial extent of each block's output (after its pool, if any).
  std::vector<Shape> trace_spatial() const;
  /// Spatial extent of each block's conv output before pooling (the extent
  /// at which attention masks live).
  std::vector<Shape> trace_spatial_prepool() const;
  std::vector<std::int64_t> block_channels() const;
  int tap_block(const std::string& tag) const;  // -1 if absent
  std::string architecture_id() const;
};

template <typename T>
struct FeaturePyramid {
  struct Entry {
    std::string id;
    Var<T> feat;
  };
  std::vector<Entry> taps;  // ENC1..ENC4, shallow to deep
  Entry bottleneck;         // planar: aliases ENC4's tensor
};

template <typename T>
struct ClassifierOutput {
  Var<T> logits;
  Var<T> probs;
};

/// Hook applied to every conv block output (attention injection point).
template <typename T>
struct LayerHook {
  virtual ~LayerHook() = default;
  virtual Var<T> apply(Graph<T>& g, int block_index, Var<T> u) = 0;
};

template <typename T>
struct BackboneModel {
  BackboneSpec spec;
  std::vector<ConvLayer<T>> convs;
  std::vector<BatchNormLayer<T>> bns;
  DenseLayer<T> fc1, fc2;  // flatten_fc: hidden + output; gap_fc: fc2 only

  void build(Rng& rng);
  void collect(ModuleState<T>& ms);
  void freeze();

  struct ForwardResult {
    FeaturePyramid<T> pyramid;
    ClassifierOutput<T> out;
    std::vector<Var<T>> block_outputs;  // post-hook output of every conv block
  };

  /// x: [N, sp..., C]. When hook is set, every conv block output passes
  /// through it before pooling / the next block (attention injection).
  ForwardResult forward(Graph<T>& g, Var<T> x, LayerHook<T>* hook = nullptr);

  Tensor<T> predict(const Tensor<T>& x_batch, LayerHook<T>* hook = nullptr);
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
  double lr = 0;
};

struct BackboneTrainResult {
  std::vector<EpochMetrics> history;
};

/// Supervised pre-training (Adam, per-epoch exponential lr decay, 10%
/// seed-fixed validation split). The returned model is left unfrozen;
/// callers freeze() it before any LEAR phase.
BackboneTrainResult train_backbone(BackboneModel<float>& model, const Dataset& dataset,
                                   const HyperParams& params);

/// Class activation map for GAP+FC heads, min-max normalized to [0,1] at
/// input resolution. Throws UnsupportedError for flatten heads.
Tensor<float> cam(BackboneModel<float>& model, const Tensor<float>& x, int class_index);

extern template struct BackboneModel<float>;
extern template struct BackboneModel<double>;

}  // namespace lear

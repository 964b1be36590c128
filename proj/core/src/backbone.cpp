#include "lear/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lear/errors.hpp"

namespace lear {

BackboneSpec BackboneSpec::planar2d(Shape input_spatial, int classes) {
  BackboneSpec s;
  s.domain = DomainTag::planar2d;
  s.input_spatial = std::move(input_spatial);
  s.in_ch = 1;
  s.class_count = classes;
  s.head = HeadKind::flatten_fc;
  s.fc_hidden = 128;
  auto blk = [](std::int64_t ch, int k, int stride, std::string tap) {
    ConvBlockSpec b;
    b.out_ch = ch;
    b.kernel = {k, k};
    b.stride = {stride, stride};
    b.tap = std::move(tap);
    return b;
  };
  s.blocks = {blk(32, 3, 1, ""),  blk(32, 4, 2, "ENC1"),  blk(64, 3, 1, ""),
              blk(64, 4, 2, "ENC2"), blk(128, 3, 1, ""), blk(128, 4, 2, "ENC3"),
              blk(256, 3, 1, ""), blk(256, 4, 2, "ENC4")};
  return s;
}

BackboneSpec BackboneSpec::volumetric3d(Shape input_spatial, int classes) {
  BackboneSpec s;
  s.domain = DomainTag::volumetric3d;
  s.input_spatial = std::move(input_spatial);
  s.in_ch = 1;
  s.class_count = classes;
  s.head = HeadKind::gap_fc;
  auto blk = [](std::int64_t ch, int k, int stride, std::string tap, bool pool, int pk) {
    ConvBlockSpec b;
    b.out_ch = ch;
    b.kernel = {k, k, k};
    b.stride = {stride, stride, stride};
    b.tap = std::move(tap);
    b.pool_after = pool;
    if (pool) {
      b.pool_kernel = {pk, pk, pk};
      b.pool_stride = {2, 2, 2};
    }
    return b;
  };
  s.blocks = {blk(64, 7, 2, "ENC1", true, 3), blk(64, 3, 1, "", false, 0),
              blk(64, 3, 1, "ENC2", true, 2), blk(128, 3, 1, "", false, 0),
              blk(128, 3, 1, "ENC3", true, 2), blk(256, 3, 1, "", false, 0),
              blk(256, 3, 1, "ENC4", true, 2), blk(512, 3, 1, "", false, 0),
              blk(512, 3, 1, "", false, 0)};
  return s;
}

BackboneSpec BackboneSpec::tiny(Shape input_spatial, int classes, std::int64_t ch) {
  BackboneSpec s;
  s.domain = input_spatial.size() == 2 ? DomainTag::planar2d : DomainTag::volumetric3d;
  s.input_spatial = std::move(input_spatial);
  s.in_ch = 1;
  s.class_count = classes;
  s.head = HeadKind::flatten_fc;
  s.fc_hidden = 8;
  const int rank = static_cast<int>(s.input_spatial.size());
  ConvBlockSpec b1, b2;
  b1.out_ch = ch;
  b1.kernel.assign(static_cast<std::size_t>(rank), 3);
  b1.stride.assign(static_cast<std::size_t>(rank), 1);
  b1.tap = "ENC1";
  b2.out_ch = ch * 2;
  b2.kernel.assign(static_cast<std::size_t>(rank), 3);
  b2.stride.assign(static_cast<std::size_t>(rank), 2);
  b2.tap = "ENC2";
  s.blocks = {b1, b2};
  return s;
}

std::vector<Shape> BackboneSpec::trace_spatial() const {
  std::vector<Shape> out;
  Shape sp = input_spatial;
  for (const auto& b : blocks) {
    std::vector<int> dil(b.kernel.size(), 1);
    sp = conv_output_spatial(sp, same_padding(sp, b.kernel, b.stride, dil));
    if (b.pool_after) {
      std::vector<int> pdil(b.pool_kernel.size(), 1);
      sp = conv_output_spatial(sp, same_padding(sp, b.pool_kernel, b.pool_stride, pdil));
    }
    out.push_back(sp);
  }
  return out;
}

std::vector<Shape> BackboneSpec::trace_spatial_prepool() const {
  std::vector<Shape> out;
  Shape sp = input_spatial;
  for (const auto& b : blocks) {
    std::vector<int> dil(b.kernel.size(), 1);
    sp = conv_output_spatial(sp, same_padding(sp, b.kernel, b.stride, dil));
    out.push_back(sp);
    if (b.pool_after) {
      std::vector<int> pdil(b.pool_kernel.size(), 1);
      sp = conv_output_spatial(sp, same_padding(sp, b.pool_kernel, b.pool_stride, pdil));
    }
  }
  return out;
}

std::vector<std::int64_t> BackboneSpec::block_channels() const {
  std::vector<std::int64_t> out;
  for (const auto& b : blocks) out.push_back(b.out_ch);
  return out;
}

int BackboneSpec::tap_block(const std::string& tag) const {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].tap == tag) return static_cast<int>(i);
  return -1;
}

std::string BackboneSpec::architecture_id() const {
  std::string id = domain == DomainTag::planar2d ? "backbone/planar2d/" : "backbone/volumetric3d/";
  for (std::size_t i = 0; i < input_spatial.size(); ++i)
    id += std::to_string(input_spatial[i]) + (i + 1 < input_spatial.size() ? "x" : "");
  id += "/c" + std::to_string(class_count) + "/b" + std::to_string(blocks.size());
  return id;
}

template <typename T>
void BackboneModel<T>::build(Rng& rng) {
  const int rank = spec.spatial_rank();
  convs.clear();
  bns.clear();
  convs.resize(spec.blocks.size());
  bns.resize(spec.blocks.size());
  std::int64_t cin = spec.in_ch;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    convs[i].init("enc" + std::to_string(i), rank, cin, b.out_ch, b.kernel, b.stride, rng);
    if (b.batch_norm) bns[i].init("enc" + std::to_string(i) + ".bn", b.out_ch);
    cin = b.out_ch;
  }
  const auto sp = spec.trace_spatial().back();
  if (spec.head == HeadKind::flatten_fc) {
    std::int64_t flat = cin;
    for (auto d : sp) flat *= d;
    fc1.init("head.fc1", flat, spec.fc_hidden, rng);
    fc2.init("head.fc2", spec.fc_hidden, spec.class_count, rng);
  } else {
    fc2.init("head.fc", cin, spec.class_count, rng);
  }
}

template <typename T>
void BackboneModel<T>::collect(ModuleState<T>& ms) {
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    convs[i].collect(ms);
    if (spec.blocks[i].batch_norm) bns[i].collect(ms);
  }
  if (spec.head == HeadKind::flatten_fc) fc1.collect(ms);
  fc2.collect(ms);
}

template <typename T>
void BackboneModel<T>::freeze() {
  ModuleState<T> ms;
  collect(ms);
  set_trainable(ms, false);
  for (auto& bn : bns) bn.frozen = true;
}

template <typename T>
typename BackboneModel<T>::ForwardResult BackboneModel<T>::forward(Graph<T>& g, Var<T> x,
                                                                   LayerHook<T>* hook) {
  Shape want = {x->value.dim(0)};
  for (auto d : spec.input_spatial) want.push_back(d);
  want.push_back(spec.in_ch);
  if (x->value.shape() != want)
    throw ShapeError("backbone: input " + shape_str(x->value.shape()) + ", expected " +
                     shape_str(want));

  ForwardResult r;
  Var<T> u = x;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    u = convs[i].forward(g, u);
    if (b.batch_norm) u = bns[i].forward(g, u);
    u = g.relu(u);
    if (hook) u = hook->apply(g, static_cast<int>(i), u);
    r.block_outputs.push_back(u);
    if (!b.tap.empty()) r.pyramid.taps.push_back({b.tap, u});
    if (b.pool_after) u = g.maxpool(u, b.pool_kernel, b.pool_stride, true);
  }
  r.pyramid.bottleneck = {"bottleneck", u};

  Var<T> h;
  if (spec.head == HeadKind::flatten_fc) {
    const std::int64_t N = u->value.dim(0);
    h = g.reshape(u, {N, u->value.numel() / N});
    h = fc1.forward(g, h);
    h = g.dropout(h, spec.dropout1);
    h = g.relu(h);
    h = fc2.forward(g, h);
    h = g.dropout(h, spec.dropout2);
  } else {
    h = g.gap(u);
    h = fc2.forward(g, h);
  }
  r.out.logits = h;
  r.out.probs = g.softmax(h);
  return r;
}

template <typename T>
Tensor<T> BackboneModel<T>::predict(const Tensor<T>& x_batch, LayerHook<T>* hook) {
  Graph<T> g;
  g.grad_enabled = false;
  g.train_mode = false;
  auto r = forward(g, g.constant(x_batch), hook);
  return r.out.probs->value;
}

template struct BackboneModel<float>;
template struct BackboneModel<double>;

namespace {

double batch_accuracy(const Tensor<float>& probs, const Tensor<float>& labels) {
  const std::int64_t N = probs.dim(0), C = probs.dim(1);
  std::int64_t hit = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    std::int64_t pa = 0, la = 0;
    for (std::int64_t c = 1; c < C; ++c) {
      if (probs[n * C + c] > probs[n * C + pa]) pa = c;
      if (labels[n * C + c] > labels[n * C + la]) la = c;
    }
    hit += pa == la;
  }
  return static_cast<double>(hit) / static_cast<double>(N);
}

}  // namespace

BackboneTrainResult train_backbone(BackboneModel<float>& model, const Dataset& dataset,
                                   const HyperParams& params) {
  if (dataset.empty()) throw ArgumentError("train_backbone: empty dataset");
  for (const auto& s : dataset.samples)
    if (!s.label.is_one_hot()) throw ArgumentError("train_backbone: labels must be one-hot");

  std::vector<std::size_t> train_idx, val_idx;
  split_train_val(dataset.size(), 0.1, static_cast<std::uint64_t>(params.seed), train_idx,
                  val_idx);
  if (train_idx.empty()) throw ArgumentError("train_backbone: no training samples after split");

  ModuleState<float> ms;
  model.collect(ms);
  Adam<float> opt(ms.params, static_cast<float>(params.adam_beta1),
                  static_cast<float>(params.adam_beta2));
  Rng root(static_cast<std::uint64_t>(params.seed));

  const std::size_t B = static_cast<std::size_t>(params.batch_size);
  BackboneTrainResult result;

  auto eval_split = [&](const std::vector<std::size_t>& idx, double& loss, double& acc) {
    if (idx.empty()) {
      loss = acc = 0;
      return;
    }
    double lsum = 0, asum = 0;
    std::size_t count = 0;
    for (std::size_t at = 0; at < idx.size(); at += B) {
      std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                     idx.begin() + static_cast<std::ptrdiff_t>(
                                                       std::min(at + B, idx.size())));
      auto x = stack_batch(dataset, chunk);
      auto y = stack_labels(dataset, chunk);
      Graph<float> g;
      g.grad_enabled = false;
      g.train_mode = false;
      auto r = model.forward(g, g.constant(x));
      auto probs = r.out.probs->value;
      const std::int64_t N = probs.dim(0), C = probs.dim(1);
      double l = 0;
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
          if (y[n * C + c] > 0)
            l -= y[n * C + c] * std::log(std::max(probs[n * C + c], 1e-12f));
      lsum += l;
      asum += batch_accuracy(probs, y) * static_cast<double>(N);
      count += chunk.size();
    }
    loss = lsum / static_cast<double>(count);
    acc = asum / static_cast<double>(count);
  };

  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    Rng erng = root.fork(static_cast<std::uint64_t>(epoch) + 1);
    std::vector<std::size_t> order = train_idx;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[erng.uniform_int(i)]);

    const float lr =
        static_cast<float>(params.lr_cls * std::pow(params.decay, static_cast<double>(epoch)));
    double running_loss = 0, running_acc = 0;
    std::size_t seen = 0;
    for (std::size_t at = 0; at < order.size(); at += B) {
      std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(at),
                                     order.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(at + B, order.size())));
      auto x = stack_batch(dataset, chunk);
      auto y = stack_labels(dataset, chunk);

      opt.zero_grad();
      Graph<float> g;
      g.train_mode = true;
      g.rng = &erng;
      auto r = model.forward(g, g.constant(x));
      auto t = g.constant(y);
      auto loss = g.scale(
          g.mean_all(g.sum_per_sample(g.mul(t, g.log_clamped(r.out.probs, 1e-12f)))), -1.0f);
      g.backward(loss);
      if (!std::isfinite(static_cast<double>(loss->value[0])))
        throw DivergenceError("train_backbone: non-finite loss at epoch " +
                              std::to_string(epoch));
      opt.step(lr);

      running_loss += static_cast<double>(loss->value[0]) * static_cast<double>(chunk.size());
      running_acc +=
          batch_accuracy(r.out.probs->value, y) * static_cast<double>(chunk.size());
      seen += chunk.size();
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = running_loss / static_cast<double>(seen);
    m.train_acc = running_acc / static_cast<double>(seen);
    eval_split(val_idx, m.val_loss, m.val_acc);
    result.history.push_back(m);
  }
  return result;
}

Tensor<float> cam(BackboneModel<float>& model, const Tensor<float>& x, int class_index) {
  if (model.spec.head != HeadKind::gap_fc)
    throw UnsupportedError("cam: requires a GAP+FC classifier head");
  if (class_index < 0 || class_index >= model.spec.class_count)
    throw ArgumentError("cam: class index out of range");

  Graph<float> g;
  g.grad_enabled = false;
  auto r = model.forward(g, g.constant(x));
  auto feats = r.pyramid.bottleneck.feat->value;  // [N, sp..., C]
  const int rank = feats.rank();
  const std::int64_t N = feats.dim(0), C = feats.dim(rank - 1);
  const std::int64_t vox = feats.numel() / (N * C);

  Shape heat_shape = feats.shape();
  heat_shape.back() = 1;
  Tensor<float> heat(heat_shape);
  const auto& w = model.fc2.w.value;  // [C, classes]
  for (std::int64_t i = 0; i < N * vox; ++i) {
    float acc = 0;
    for (std::int64_t c = 0; c < C; ++c)
      acc += feats[i * C + c] * w[c * model.spec.class_count + class_index];
    heat[i] = acc;
  }

  Graph<float> g2;
  g2.grad_enabled = false;
  auto up = g2.resize_linear(g2.constant(heat), model.spec.input_spatial);
  Tensor<float> out = up->value;
  float lo = out[0], hi = out[0];
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    lo = std::min(lo, out[i]);
    hi = std::max(hi, out[i]);
  }
  const float span = hi - lo;
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = span > 0 ? (out[i] - lo) / span : 0.0f;
  return out;
}

}  // namespace lear

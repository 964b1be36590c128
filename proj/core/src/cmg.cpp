#include "lear/cmg.hpp"

#include <algorithm>

#include "lear/errors.hpp"

namespace lear {

template <typename T>
Var<T> tile_condition(Graph<T>& g, Var<T> t_rows, const Shape& spatial) {
  if (t_rows->value.rank() != 2) throw ShapeError("tile_condition: need [N,|Y|] rows");
  for (auto d : spatial)
    if (d < 1) throw ShapeError("tile_condition: nonpositive spatial extent");
  const std::int64_t N = t_rows->value.dim(0), C = t_rows->value.dim(1);
  Shape mid = {N};
  for (std::size_t i = 0; i < spatial.size(); ++i) mid.push_back(1);
  mid.push_back(C);
  Shape full = {N};
  for (auto d : spatial) full.push_back(d);
  full.push_back(C);
  return g.broadcast_to(g.reshape(t_rows, mid), full);
}

template <typename T>
void SkipConditioner<T>::init(const std::string& name, int rank, std::int64_t feat_ch,
                              int class_count, Rng& rng, bool with_bn) {
  std::vector<int> k(static_cast<std::size_t>(rank), 3);
  std::vector<int> s(static_cast<std::size_t>(rank), 1);
  conv.init(name, rank, feat_ch + class_count, feat_ch, k, s, rng);
  has_bn = with_bn;
  if (has_bn) bn.init(name + ".bn", feat_ch);
}

template <typename T>
Var<T> SkipConditioner<T>::apply(Graph<T>& g, Var<T> feat, Var<T> t_rows) {
  Shape spatial(feat->value.shape().begin() + 1, feat->value.shape().end() - 1);
  auto tiled = tile_condition(g, t_rows, spatial);
  auto u = conv.forward(g, g.concat_ch(feat, tiled));
  if (has_bn) u = bn.forward(g, u);
  return g.lrelu(u, static_cast<T>(kLReluSlope));
}

namespace {

template <typename T>
Var<T> act_by_domain(Graph<T>& g, Var<T> u, DomainTag domain) {
  return domain == DomainTag::planar2d ? g.relu(u) : g.lrelu(u, static_cast<T>(kLReluSlope));
}

}  // namespace

template <typename T>
void GeneratorModel<T>::build(const BackboneSpec& spec, int classes, Rng& rng) {
  domain = spec.domain;
  class_count = classes;
  input_spatial = spec.input_spatial;
  out_ch = spec.in_ch;
  const int rank = spec.spatial_rank();

  std::vector<int> tap_blocks;
  std::vector<std::int64_t> tap_ch;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i)
    if (!spec.blocks[i].tap.empty()) {
      tap_blocks.push_back(static_cast<int>(i));
      tap_ch.push_back(spec.blocks[i].out_ch);
    }
  if (tap_blocks.empty()) throw ConfigError("generator: backbone spec has no tapped layers");
  const std::int64_t bottleneck_ch = spec.blocks.back().out_ch;
  bottleneck_separate = tap_blocks.back() != static_cast<int>(spec.blocks.size()) - 1;

  tap_cond.clear();
  tap_cond.resize(tap_blocks.size());
  for (std::size_t i = 0; i < tap_blocks.size(); ++i)
    tap_cond[i].init("gen.cond" + std::to_string(i), rank, tap_ch[i], classes, rng, false);
  if (bottleneck_separate)
    bottleneck_cond.init("gen.cond_bottleneck", rank, bottleneck_ch, classes, rng, true);

  const bool planar_profile = domain == DomainTag::planar2d && tap_blocks.size() == 4 &&
                              !bottleneck_separate && spec.blocks.size() == 8;
  const bool volumetric_profile =
      domain == DomainTag::volumetric3d && tap_blocks.size() == 4 && bottleneck_separate;

  auto k_of = [&](int k) { return std::vector<int>(static_cast<std::size_t>(rank), k); };
  auto ones = [&]() { return std::vector<int>(static_cast<std::size_t>(rank), 1); };

  stages.clear();
  std::int64_t cur = bottleneck_separate ? bottleneck_ch : tap_ch.back();
  const int deepest_skip = static_cast<int>(tap_blocks.size()) - (bottleneck_separate ? 1 : 2);

  for (int i = deepest_skip; i >= 0; --i) {
    Stage st;
    st.tap_index = i;
    const std::int64_t skip_ch = tap_ch[static_cast<std::size_t>(i)];
    std::string base = "gen.dec" + std::to_string(i);
    const bool first_volumetric_stage =
        volumetric_profile && i == deepest_skip;  // DEC4: upsample straight into concat
    if (!first_volumetric_stage) {
      st.has_dec = true;
      if (planar_profile && i == 1) {
        // odd skip extent (7): unpadded k2 conv shaves one voxel per axis
        st.dec.init(base, rank, cur, skip_ch, k_of(2), ones(), rng, {}, PadMode::valid);
      } else if (volumetric_profile) {
        // odd middle extent: unpadded (1,2,1) conv shaves the height axis
        st.dec.init(base, rank, cur, skip_ch, {1, 2, 1}, ones(), rng, {}, PadMode::valid);
      } else {
        st.dec.init(base, rank, cur, skip_ch, k_of(3), ones(), rng);
      }
      st.dec_bn.init(base + ".bn", skip_ch);
      cur = skip_ch;
    }
    const int post_convs = volumetric_profile ? 2 : 1;
    std::int64_t in_ch_post = cur + skip_ch;
    st.post.resize(static_cast<std::size_t>(post_convs));
    st.post_bn.resize(static_cast<std::size_t>(post_convs));
    for (int p = 0; p < post_convs; ++p) {
      std::string pname = base + ".post" + std::to_string(p);
      st.post[static_cast<std::size_t>(p)].init(pname, rank, in_ch_post, skip_ch, k_of(3),
                                                ones(), rng);
      st.post_bn[static_cast<std::size_t>(p)].init(pname + ".bn", skip_ch);
      in_ch_post = skip_ch;
    }
    cur = skip_ch;
    stages.push_back(std::move(st));
  }

  final_deconv = planar_profile;
  if (final_deconv) {
    deconv.init("gen.out", rank, cur, out_ch, k_of(4), k_of(2), rng);
  } else {
    final_conv.init("gen.out", rank, cur, out_ch, k_of(3), ones(), rng);
  }
  final_bn.init("gen.out.bn", out_ch);
}

template <typename T>
void GeneratorModel<T>::collect(ModuleState<T>& ms) {
  for (auto& c : tap_cond) c.collect(ms);
  if (bottleneck_separate) bottleneck_cond.collect(ms);
  for (auto& st : stages) {
    if (st.has_dec) {
      st.dec.collect(ms);
      st.dec_bn.collect(ms);
    }
    for (std::size_t p = 0; p < st.post.size(); ++p) {
      st.post[p].collect(ms);
      st.post_bn[p].collect(ms);
    }
  }
  if (final_deconv)
    deconv.collect(ms);
  else
    final_conv.collect(ms);
  final_bn.collect(ms);
}

template <typename T>
Var<T> GeneratorModel<T>::forward(Graph<T>& g, const FeaturePyramid<T>& pyr, Var<T> t_rows) {
  if (t_rows->value.dim(1) != class_count)
    throw ArgumentError("generator: condition length " + std::to_string(t_rows->value.dim(1)) +
                        " != class count " + std::to_string(class_count));
  if (pyr.taps.size() != tap_cond.size())
    throw ShapeError("generator: pyramid tap count mismatch");

  Var<T> cur = bottleneck_separate
                   ? bottleneck_cond.apply(g, pyr.bottleneck.feat, t_rows)
                   : tap_cond.back().apply(g, pyr.taps.back().feat, t_rows);

  for (auto& st : stages) {
    cur = g.upsample_nn(cur, 2);
    if (st.has_dec) {
      cur = st.dec.forward(g, cur);
      cur = st.dec_bn.forward(g, cur);
      cur = act_by_domain(g, cur, domain);
    }
    auto skip_feat = pyr.taps[static_cast<std::size_t>(st.tap_index)].feat;
    Shape skip_sp(skip_feat->value.shape().begin() + 1, skip_feat->value.shape().end() - 1);
    cur = g.crop_or_pad_center(cur, skip_sp);
    auto conditioned = tap_cond[static_cast<std::size_t>(st.tap_index)].apply(g, skip_feat, t_rows);
    cur = g.concat_ch(cur, conditioned);
    for (std::size_t p = 0; p < st.post.size(); ++p) {
      cur = st.post[p].forward(g, cur);
      cur = st.post_bn[p].forward(g, cur);
      cur = act_by_domain(g, cur, domain);
    }
  }

  if (final_deconv) {
    cur = deconv.forward(g, cur);
    cur = final_bn.forward(g, cur);
    cur = g.crop_or_pad_center(cur, input_spatial);
    return g.tanh_(cur);
  }
  // upsample until every axis reaches the input extent, then align
  auto needs_up = [&](const Var<T>& v) {
    for (std::size_t a = 0; a < input_spatial.size(); ++a)
      if (v->value.dim(static_cast<int>(a) + 1) < input_spatial[a]) return true;
    return false;
  };
  while (needs_up(cur)) cur = g.upsample_nn(cur, 2);
  cur = g.crop_or_pad_center(cur, input_spatial);
  cur = final_conv.forward(g, cur);
  cur = final_bn.forward(g, cur);
  // planar activation is tanh; volumetric output stays linear
  return domain == DomainTag::planar2d ? g.tanh_(cur) : cur;
}

template <typename T>
std::string GeneratorModel<T>::architecture_id() const {
  std::string id = domain == DomainTag::planar2d ? "cmg/planar2d/" : "cmg/volumetric3d/";
  for (std::size_t i = 0; i < input_spatial.size(); ++i)
    id += std::to_string(input_spatial[i]) + (i + 1 < input_spatial.size() ? "x" : "");
  return id + "/c" + std::to_string(class_count);
}

template <typename T>
void DiscriminatorModel<T>::build(DomainTag tag, const Shape& in_sp, std::int64_t channels,
                                  Rng& rng) {
  domain = tag;
  input_spatial = in_sp;
  in_ch = channels;
  blocks.clear();
  const int rank = static_cast<int>(in_sp.size());
  auto k_of = [&](int k) { return std::vector<int>(static_cast<std::size_t>(rank), k); };

  auto add_block = [&](std::int64_t cout, int k, int stride, bool bn, bool pool) {
    Block b;
    const std::int64_t cin = blocks.empty() ? in_ch : blocks.back().conv.out_ch;
    b.conv.init("disc" + std::to_string(blocks.size()), rank, cin, cout, k_of(k), k_of(stride),
                rng);
    b.has_bn = bn;
    if (bn) b.bn.init("disc" + std::to_string(blocks.size()) + ".bn", cout);
    b.pool_after = pool;
    if (pool) {
      b.pool_kernel = k_of(2);
      b.pool_stride = k_of(2);
    }
    blocks.push_back(std::move(b));
  };

  if (tag == DomainTag::planar2d) {
    add_block(32, 3, 1, false, false);
    add_block(32, 4, 2, true, false);
    add_block(64, 3, 1, true, false);
    add_block(64, 4, 2, true, false);
    add_block(128, 3, 1, true, false);
    add_block(128, 4, 2, true, false);
    add_block(256, 3, 1, true, false);
    add_block(256, 4, 2, true, false);
  } else {
    add_block(16, 3, 1, false, false);
    add_block(16, 3, 1, true, true);
    add_block(32, 3, 1, true, false);
    add_block(32, 3, 1, true, true);
    add_block(64, 3, 1, true, false);
    add_block(64, 3, 1, true, false);
    add_block(64, 3, 1, true, true);
    add_block(128, 3, 1, true, false);
    add_block(128, 3, 1, true, false);
    add_block(128, 3, 1, true, true);
    add_block(128, 3, 1, true, false);
    add_block(128, 3, 1, true, false);
    add_block(128, 3, 1, true, false);
  }

  Shape sp = in_sp;
  for (const auto& b : blocks) {
    std::vector<int> dil(b.conv.kernel.size(), 1);
    sp = conv_output_spatial(sp, same_padding(sp, b.conv.kernel, b.conv.stride, dil));
    if (b.pool_after) {
      std::vector<int> pdil(b.pool_kernel.size(), 1);
      sp = conv_output_spatial(sp, same_padding(sp, b.pool_kernel, b.pool_stride, pdil));
    }
  }
  std::int64_t flat = blocks.back().conv.out_ch;
  for (auto d : sp) flat *= d;
  fc.init("disc.fc", flat, 1, rng);
}

template <typename T>
void DiscriminatorModel<T>::build_tiny(const Shape& in_sp, std::int64_t ch, Rng& rng) {
  domain = in_sp.size() == 2 ? DomainTag::planar2d : DomainTag::volumetric3d;
  input_spatial = in_sp;
  in_ch = 1;
  blocks.clear();
  const int rank = static_cast<int>(in_sp.size());
  auto k_of = [&](int k) { return std::vector<int>(static_cast<std::size_t>(rank), k); };
  Block b1;
  b1.conv.init("disc0", rank, 1, ch, k_of(3), k_of(1), rng);
  b1.has_bn = false;
  blocks.push_back(std::move(b1));
  Block b2;
  b2.conv.init("disc1", rank, ch, ch * 2, k_of(3), k_of(2), rng);
  b2.has_bn = false;
  blocks.push_back(std::move(b2));
  Shape sp = in_sp;
  for (const auto& b : blocks) {
    std::vector<int> dil(b.conv.kernel.size(), 1);
    sp = conv_output_spatial(sp, same_padding(sp, b.conv.kernel, b.conv.stride, dil));
  }
  std::int64_t flat = ch * 2;
  for (auto d : sp) flat *= d;
  fc.init("disc.fc", flat, 1, rng);
}

template <typename T>
void DiscriminatorModel<T>::collect(ModuleState<T>& ms) {
  for (auto& b : blocks) {
    b.conv.collect(ms);
    if (b.has_bn) b.bn.collect(ms);
  }
  fc.collect(ms);
}

template <typename T>
Var<T> DiscriminatorModel<T>::forward(Graph<T>& g, Var<T> x) {
  Shape want = {x->value.dim(0)};
  for (auto d : input_spatial) want.push_back(d);
  want.push_back(in_ch);
  if (x->value.shape() != want)
    throw ShapeError("discriminator: input " + shape_str(x->value.shape()) + ", expected " +
                     shape_str(want));
  Var<T> u = x;
  for (auto& b : blocks) {
    u = b.conv.forward(g, u);
    if (b.has_bn) u = b.bn.forward(g, u);
    u = g.lrelu(u, static_cast<T>(kLReluSlope));
    if (b.pool_after) u = g.maxpool(u, b.pool_kernel, b.pool_stride, true);
  }
  const std::int64_t N = u->value.dim(0);
  return fc.forward(g, g.reshape(u, {N, u->value.numel() / N}));
}

template <typename T>
std::string DiscriminatorModel<T>::architecture_id() const {
  std::string id = domain == DomainTag::planar2d ? "disc/planar2d/" : "disc/volumetric3d/";
  for (std::size_t i = 0; i < input_spatial.size(); ++i)
    id += std::to_string(input_spatial[i]) + (i + 1 < input_spatial.size() ? "x" : "");
  return id;
}

template <typename T>
MapResult<T> generate_map(Graph<T>& g, BackboneModel<T>& encoder, LayerHook<T>* hook,
                          GeneratorModel<T>& gen, Var<T> x, Var<T> t_rows) {
  if (t_rows->value.dim(1) != encoder.spec.class_count)
    throw ArgumentError("generate_map: condition length != class count");
  auto enc = encoder.forward(g, x, hook);
  MapResult<T> r;
  r.pyramid = enc.pyramid;
  r.out = enc.out;
  r.map = gen.forward(g, enc.pyramid, t_rows);
  return r;
}

template <typename T>
Var<T> transform(Graph<T>& g, Var<T> x, Var<T> m) {
  if (!x->value.same_shape(m->value)) throw ShapeError("transform: shape mismatch");
  return g.add(x, m);
}

template <typename T>
CycleResult<T> cycle_reconstruct(Graph<T>& g, BackboneModel<T>& encoder, LayerHook<T>* hook,
                                 GeneratorModel<T>& gen, Var<T> x, Var<T> t_rows) {
  CycleResult<T> r;
  auto first = generate_map(g, encoder, hook, gen, x, t_rows);
  r.map1 = first.map;
  r.out_x = first.out;
  r.x_tilde = transform(g, x, r.map1);
  // second map conditioned on the posterior of the ORIGINAL input
  auto second = generate_map(g, encoder, hook, gen, r.x_tilde, first.out.probs);
  r.out_x_tilde = second.out;
  r.map2 = second.map;
  r.x_prime = transform(g, r.x_tilde, r.map2);
  return r;
}

template struct SkipConditioner<float>;
template struct SkipConditioner<double>;
template struct GeneratorModel<float>;
template struct GeneratorModel<double>;
template struct DiscriminatorModel<float>;
template struct DiscriminatorModel<double>;
template Var<float> tile_condition(Graph<float>&, Var<float>, const Shape&);
template Var<double> tile_condition(Graph<double>&, Var<double>, const Shape&);
template MapResult<float> generate_map(Graph<float>&, BackboneModel<float>&, LayerHook<float>*,
                                       GeneratorModel<float>&, Var<float>, Var<float>);
template MapResult<double> generate_map(Graph<double>&, BackboneModel<double>&,
                                        LayerHook<double>*, GeneratorModel<double>&,
                                        Var<double>, Var<double>);
template Var<float> transform(Graph<float>&, Var<float>, Var<float>);
template Var<double> transform(Graph<double>&, Var<double>, Var<double>);
template CycleResult<float> cycle_reconstruct(Graph<float>&, BackboneModel<float>&,
                                              LayerHook<float>*, GeneratorModel<float>&,
                                              Var<float>, Var<float>);
template CycleResult<double> cycle_reconstruct(Graph<double>&, BackboneModel<double>&,
                                               LayerHook<double>*, GeneratorModel<double>&,
                                               Var<double>, Var<double>);

}  // namespace lear

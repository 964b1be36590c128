#include <benchmark/benchmark.h>

#include "lear/backbone.hpp"
#include "lear/cmg.hpp"
#include "lear/guidance.hpp"
#include "lear/rng.hpp"

using namespace lear;

namespace {

Tensor<float> random_batch(const Shape& shape, std::uint64_t seed) {
  Tensor<float> t(shape);
  Rng rng(seed);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform());
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto batch = state.range(0);
  Rng rng(1);
  ConvLayer<float> conv;
  conv.init("c", 2, 32, 64, {3, 3}, {1, 1}, rng);
  auto x = random_batch({batch, 14, 14, 32}, 2);
  for (auto _ : state) {
    Graph<float> g;
    g.grad_enabled = false;
    benchmark::DoNotOptimize(conv.forward(g, g.constant(x))->value.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(64);

void BM_Conv3dForwardBackward(benchmark::State& state) {
  Rng rng(1);
  ConvLayer<float> conv;
  conv.init("c", 3, 16, 32, {3, 3, 3}, {1, 1, 1}, rng);
  auto x = random_batch({2, 16, 19, 16, 16}, 2);
  for (auto _ : state) {
    Graph<float> g;
    auto in = g.leaf(x, true);
    auto y = conv.forward(g, in);
    auto loss = g.mean_all(g.square_(y));
    g.backward(loss);
    benchmark::DoNotOptimize(in->grad.data());
  }
}
BENCHMARK(BM_Conv3dForwardBackward);

void BM_PlanarBackboneForward(benchmark::State& state) {
  BackboneModel<float> model;
  model.spec = BackboneSpec::planar2d();
  Rng rng(3);
  model.build(rng);
  auto x = random_batch({32, 28, 28, 1}, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.predict(x).data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_PlanarBackboneForward);

void BM_PlanarGeneratorForward(benchmark::State& state) {
  BackboneModel<float> enc;
  enc.spec = BackboneSpec::planar2d();
  Rng rng(5);
  enc.build(rng);
  enc.freeze();
  GeneratorModel<float> gen;
  gen.build(enc.spec, 10, rng);
  auto x = random_batch({32, 28, 28, 1}, 6);
  Tensor<float> t({32, 10});
  for (int i = 0; i < 32; ++i) t[i * 10 + (i % 10)] = 1.0f;
  for (auto _ : state) {
    Graph<float> g;
    g.grad_enabled = false;
    auto r = generate_map(g, enc, gen, g.constant(x), g.constant(t));
    benchmark::DoNotOptimize(r.map->value.data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_PlanarGeneratorForward);

void BM_Ncc(benchmark::State& state) {
  auto a = random_batch({96, 114, 96, 1}, 7);
  auto b = random_batch({96, 114, 96, 1}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(ncc(a, b));
}
BENCHMARK(BM_Ncc);

void BM_ResizeLinear3d(benchmark::State& state) {
  auto x = random_batch({1, 32, 38, 32, 1}, 9);
  for (auto _ : state) {
    Graph<float> g;
    g.grad_enabled = false;
    benchmark::DoNotOptimize(g.resize_linear(g.constant(x), {16, 19, 16})->value.data());
  }
}
BENCHMARK(BM_ResizeLinear3d);

}  // namespace

BENCHMARK_MAIN();

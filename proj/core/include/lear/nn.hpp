#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lear/graph.hpp"
#include "lear/rng.hpp"
#include "lear/tensor.hpp"

namespace lear {

enum class PadMode { same, valid };

/// Collects a module's trainable params and persistent state (BN running
/// stats) in a fixed order for checkpointing, optimization, and checksums.
template <typename T>
struct ModuleState {
  std::vector<Param<T>*> params;
  std::vector<std::pair<std::string, Tensor<T>*>> state;

  void add(Param<T>& p) { params.push_back(&p); }
  void add_state(std::string name, Tensor<T>& t) { state.emplace_back(std::move(name), &t); }
};

template <typename T>
void glorot_uniform(Tensor<T>& w, std::int64_t fan_in, std::int64_t fan_out, Rng& rng);

template <typename T>
struct ConvLayer {
  std::vector<int> kernel, stride, dilation;
  PadMode pad = PadMode::same;
  bool use_bias = true;
  Param<T> w;  // [taps*Cin, Cout]
  Param<T> b;  // [Cout]
  std::int64_t in_ch = 0, out_ch = 0;

  void init(std::string name, int spatial_rank, std::int64_t cin, std::int64_t cout,
            std::vector<int> k, std::vector<int> s, Rng& rng,
            std::vector<int> dil = {}, PadMode p = PadMode::same, bool bias = true);
  Var<T> forward(Graph<T>& g, Var<T> x) const;
  void collect(ModuleState<T>& ms) {
    ms.add(w);
    if (use_bias) ms.add(b);
  }
};

/// Transposed convolution with output extent = input extent * stride.
template <typename T>
struct ConvTransposeLayer {
  std::vector<int> kernel, stride;
  Param<T> w;  // [taps*Cout, Cin]
  Param<T> b;  // [Cout]
  std::int64_t in_ch = 0, out_ch = 0;

  void init(std::string name, int spatial_rank, std::int64_t cin, std::int64_t cout,
            std::vector<int> k, std::vector<int> s, Rng& rng);
  Var<T> forward(Graph<T>& g, Var<T> x) const;
  void collect(ModuleState<T>& ms) {
    ms.add(w);
    ms.add(b);
  }
};

template <typename T>
struct BatchNormLayer {
  Param<T> gamma, beta;
  Tensor<T> run_mean, run_var;
  bool frozen = false;  // eval statistics regardless of graph mode
  T momentum = T(0.9);
  T eps = T(1e-3);

  void init(std::string name, std::int64_t ch);
  Var<T> forward(Graph<T>& g, Var<T> x);
  void collect(ModuleState<T>& ms) {
    ms.add(gamma);
    ms.add(beta);
    ms.add_state(gamma.name + ".run_mean", run_mean);
    ms.add_state(gamma.name + ".run_var", run_var);
  }
};

template <typename T>
struct DenseLayer {
  Param<T> w;  // [d, u]
  Param<T> b;  // [u]

  void init(std::string name, std::int64_t d, std::int64_t u, Rng& rng);
  Var<T> forward(Graph<T>& g, Var<T> x) const;  // x: [N, d]
  void collect(ModuleState<T>& ms) {
    ms.add(w);
    ms.add(b);
  }
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, T beta1, T beta2, T eps = T(1e-8));
  void step(T lr);
  void zero_grad();

 private:
  struct Slot {
    Param<T>* p;
    Tensor<T> m, v;
  };
  std::vector<Slot> slots_;
  T beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

template <typename T>
void set_trainable(const ModuleState<T>& ms, bool trainable) {
  for (auto* p : ms.params) p->trainable = trainable;
}

extern template struct ConvLayer<float>;
extern template struct ConvLayer<double>;
extern template struct ConvTransposeLayer<float>;
extern template struct ConvTransposeLayer<double>;
extern template struct BatchNormLayer<float>;
extern template struct BatchNormLayer<double>;
extern template struct DenseLayer<float>;
extern template struct DenseLayer<double>;
extern template class Adam<float>;
extern template class Adam<double>;
extern template void glorot_uniform<float>(Tensor<float>&, std::int64_t, std::int64_t, Rng&);
extern template void glorot_uniform<double>(Tensor<double>&, std::int64_t, std::int64_t, Rng&);

}  // namespace lear

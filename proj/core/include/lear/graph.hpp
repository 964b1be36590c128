#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lear/rng.hpp"
#include "lear/tensor.hpp"

namespace lear {

/// Trainable tensor: value plus persistent gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // lazily allocated; for param leaves aliases Param::grad
  bool requires_grad = false;
  std::function<void(Node&)> backprop;
  std::vector<std::shared_ptr<Node>> parents;
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

/// Per-axis convolution geometry with explicit (possibly asymmetric) padding.
struct ConvGeom {
  std::vector<int> kernel;
  std::vector<int> stride;
  std::vector<int> dilation;
  std::vector<int> pad_beg;
  std::vector<int> pad_end;
};

/// Resolves TF-style SAME padding: out = ceil(in/stride), extra pad at the end.
ConvGeom same_padding(const Shape& in_sp, std::vector<int> kernel, std::vector<int> stride,
                      std::vector<int> dilation);
ConvGeom valid_padding(std::vector<int> kernel, std::vector<int> stride,
                       std::vector<int> dilation);
Shape conv_output_spatial(const Shape& in_sp, const ConvGeom& g);

/// Define-by-run reverse-mode tape. Ops append nodes; backward() walks the
/// tape in reverse creation order. One Graph per optimization step.
template <typename T>
class Graph {
 public:
  bool train_mode = false;   // dropout / batchnorm behavior
  bool grad_enabled = true;  // false: pure inference, no tape closures
  Rng* rng = nullptr;        // dropout masks

  Var<T> leaf(Tensor<T> v, bool requires_grad = false);
  Var<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }
  Var<T> param(Param<T>& p);
  Var<T> detach(const Var<T>& x);

  Var<T> add(Var<T> a, Var<T> b);
  Var<T> sub(Var<T> a, Var<T> b);
  Var<T> mul(Var<T> a, Var<T> b);
  Var<T> mul_bcast(Var<T> a, Var<T> b);  // b's dims each equal a's or 1
  Var<T> scale(Var<T> a, T c);
  Var<T> add_scalar(Var<T> a, T c);
  Var<T> abs_(Var<T> a);
  Var<T> square_(Var<T> a);
  Var<T> sqrt_(Var<T> a);
  Var<T> recip_guarded(Var<T> a, T eps);  // 1/max(a,eps)
  Var<T> log_clamped(Var<T> a, T eps);    // log(max(a,eps))
  Var<T> relu(Var<T> a);
  Var<T> lrelu(Var<T> a, T slope);
  Var<T> tanh_(Var<T> a);
  Var<T> sigmoid_(Var<T> a);
  Var<T> dropout(Var<T> a, double rate);

  Var<T> matmul(Var<T> x, Var<T> w);  // [N,d] x [d,u]
  Var<T> softmax(Var<T> logits);      // rowwise, [N,C]

  Var<T> conv(Var<T> x, Var<T> w, Var<T> b, const ConvGeom& g);
  Var<T> conv_transpose(Var<T> x, Var<T> w, Var<T> b, const ConvGeom& adjoint,
                        Shape out_sp);
  Var<T> maxpool(Var<T> x, std::vector<int> kernel, std::vector<int> stride, bool same);
  Var<T> gap(Var<T> x);  // [N,sp...,C] -> [N,C]
  Var<T> upsample_nn(Var<T> x, int factor);
  Var<T> resize_linear(Var<T> x, Shape out_sp);  // align-corners
  Var<T> concat_ch(Var<T> a, Var<T> b);
  Var<T> crop_or_pad_center(Var<T> x, Shape target_sp);
  Var<T> broadcast_to(Var<T> x, Shape target);
  Var<T> slice_axis(Var<T> x, int axis, std::int64_t start, std::int64_t len);
  Var<T> reshape(Var<T> x, Shape s);

  Var<T> sum_axis_keep(Var<T> x, int axis);
  Var<T> sum_per_sample(Var<T> x);  // [N,...] -> [N]
  Var<T> sum_all(Var<T> x);         // -> [1]
  Var<T> mean_all(Var<T> x);        // -> [1]

  Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& run_mean,
                   Tensor<T>& run_var, bool use_batch_stats, bool update_running,
                   T momentum, T eps);

  void backward(const Var<T>& loss);
  void clear() { tape_.clear(); }
  std::size_t size() const { return tape_.size(); }

  /// Appends a node to the tape (op-implementation hook).
  Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents);

 private:
  std::vector<Var<T>> tape_;
};

template <typename T>
void ensure_grad(Node<T>& n) {
  if (!n.grad.defined()) n.grad = Tensor<T>(n.value.shape());
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace lear

#include "lear/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace lear {

namespace {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

std::vector<std::int64_t> row_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// ---- im2col / col2im ------------------------------------------------------
//
// src: [N, src_sp..., C]; rows indexed by (n, dst_sp...) in row-major order.
// Column layout per row: kernel taps in row-major order, C contiguous per tap.

struct PatchGeom {
  int S = 0;                       // spatial rank
  std::int64_t N = 0, C = 0;
  Shape src_sp, dst_sp;
  ConvGeom g;
  std::int64_t rows = 0;           // N * prod(dst_sp)
  std::int64_t taps = 1;           // prod(kernel)
  std::int64_t cols = 0;           // taps * C
};

PatchGeom make_patch_geom(const Shape& src_shape, const Shape& dst_sp, const ConvGeom& g) {
  PatchGeom p;
  p.S = static_cast<int>(src_shape.size()) - 2;
  p.N = src_shape.front();
  p.C = src_shape.back();
  p.src_sp.assign(src_shape.begin() + 1, src_shape.end() - 1);
  p.dst_sp = dst_sp;
  p.g = g;
  p.rows = p.N;
  for (auto d : dst_sp) p.rows *= d;
  for (auto k : g.kernel) p.taps *= k;
  p.cols = p.taps * p.C;
  return p;
}

template <typename T>
void im2col_rows(const T* src, const PatchGeom& p, std::int64_t row0, std::int64_t nrows,
                 T* col) {
  const int S = p.S;
  std::int64_t dst_vox = 1;
  for (auto d : p.dst_sp) dst_vox *= d;
  std::int64_t src_vox = 1;
  for (auto d : p.src_sp) src_vox *= d;

  std::int64_t src_st[3] = {1, 1, 1};
  for (int a = S - 2; a >= 0; --a)
    src_st[a] = src_st[a + 1] * p.src_sp[static_cast<std::size_t>(a + 1)];

  const std::int64_t csz = static_cast<std::int64_t>(sizeof(T)) * p.C;
  for (std::int64_t r = 0; r < nrows; ++r) {
    const std::int64_t gr = row0 + r;
    const std::int64_t n = gr / dst_vox;
    std::int64_t rem = gr % dst_vox;
    std::int64_t out_pos[3] = {0, 0, 0};
    for (int a = S - 1; a >= 0; --a) {
      out_pos[a] = rem % p.dst_sp[static_cast<std::size_t>(a)];
      rem /= p.dst_sp[static_cast<std::size_t>(a)];
    }
    T* dst_row = col + r * p.cols;
    const T* src_n = src + n * src_vox * p.C;

    std::int64_t tap[3] = {0, 0, 0};
    for (std::int64_t t = 0; t < p.taps; ++t) {
      bool ok = true;
      std::int64_t off = 0;
      for (int a = 0; a < S; ++a) {
        const std::int64_t ip = out_pos[a] * p.g.stride[static_cast<std::size_t>(a)] +
                                tap[a] * p.g.dilation[static_cast<std::size_t>(a)] -
                                p.g.pad_beg[static_cast<std::size_t>(a)];
        if (ip < 0 || ip >= p.src_sp[static_cast<std::size_t>(a)]) {
          ok = false;
          break;
        }
        off += ip * src_st[a];
      }
      if (ok)
        std::memcpy(dst_row + t * p.C, src_n + off * p.C, static_cast<std::size_t>(csz));
      else
        std::memset(dst_row + t * p.C, 0, static_cast<std::size_t>(csz));
      for (int a = S - 1; a >= 0; --a) {
        if (++tap[a] < p.g.kernel[static_cast<std::size_t>(a)]) break;
        tap[a] = 0;
      }
    }
  }
}

template <typename T>
void col2im_add_rows(const T* col, const PatchGeom& p, std::int64_t row0, std::int64_t nrows,
                     T* src_grad) {
  const int S = p.S;
  std::int64_t dst_vox = 1;
  for (auto d : p.dst_sp) dst_vox *= d;
  std::int64_t src_vox = 1;
  for (auto d : p.src_sp) src_vox *= d;
  std::int64_t src_st[3] = {1, 1, 1};
  for (int a = S - 2; a >= 0; --a)
    src_st[a] = src_st[a + 1] * p.src_sp[static_cast<std::size_t>(a + 1)];

  for (std::int64_t r = 0; r < nrows; ++r) {
    const std::int64_t gr = row0 + r;
    const std::int64_t n = gr / dst_vox;
    std::int64_t rem = gr % dst_vox;
    std::int64_t out_pos[3] = {0, 0, 0};
    for (int a = S - 1; a >= 0; --a) {
      out_pos[a] = rem % p.dst_sp[static_cast<std::size_t>(a)];
      rem /= p.dst_sp[static_cast<std::size_t>(a)];
    }
    const T* src_row = col + r * p.cols;
    T* dst_n = src_grad + n * src_vox * p.C;

    std::int64_t tap[3] = {0, 0, 0};
    for (std::int64_t t = 0; t < p.taps; ++t) {
      bool ok = true;
      std::int64_t off = 0;
      for (int a = 0; a < S; ++a) {
        const std::int64_t ip = out_pos[a] * p.g.stride[static_cast<std::size_t>(a)] +
                                tap[a] * p.g.dilation[static_cast<std::size_t>(a)] -
                                p.g.pad_beg[static_cast<std::size_t>(a)];
        if (ip < 0 || ip >= p.src_sp[static_cast<std::size_t>(a)]) {
          ok = false;
          break;
        }
        off += ip * src_st[a];
      }
      if (ok) {
        T* d = dst_n + off * p.C;
        const T* s = src_row + t * p.C;
        for (std::int64_t c = 0; c < p.C; ++c) d[c] += s[c];
      }
      for (int a = S - 1; a >= 0; --a) {
        if (++tap[a] < p.g.kernel[static_cast<std::size_t>(a)]) break;
        tap[a] = 0;
      }
    }
  }
}

constexpr std::int64_t kChunkBytes = 8 << 20;

std::int64_t chunk_rows(std::int64_t cols, std::int64_t elem_size) {
  return std::max<std::int64_t>(1, kChunkBytes / std::max<std::int64_t>(1, cols * elem_size));
}

// Generic broadcast helpers (rank <= 6, used for condition tiles and masks).

template <typename T>
void bcast_expand(const Tensor<T>& src, Tensor<T>& dst) {
  const int r = dst.rank();
  const auto& ds = dst.shape();
  const auto& ss = src.shape();
  auto dst_st = row_strides(ds);
  auto src_st = row_strides(ss);
  for (int i = 0; i < r; ++i)
    if (ss[static_cast<std::size_t>(i)] == 1) src_st[static_cast<std::size_t>(i)] = 0;
  const std::int64_t n = dst.numel();
  const T* sp = src.data();
  T* dp = dst.data();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t so = 0;
    for (int a = 0; a < r; ++a) so += idx[static_cast<std::size_t>(a)] * src_st[static_cast<std::size_t>(a)];
    dp[i] = sp[so];
    for (int a = r - 1; a >= 0; --a) {
      if (++idx[static_cast<std::size_t>(a)] < ds[static_cast<std::size_t>(a)]) break;
      idx[static_cast<std::size_t>(a)] = 0;
    }
  }
}

template <typename T>
void bcast_reduce_add(const Tensor<T>& big, Tensor<T>& small) {
  const int r = big.rank();
  const auto& bs = big.shape();
  const auto& ss = small.shape();
  auto small_st = row_strides(ss);
  for (int i = 0; i < r; ++i)
    if (ss[static_cast<std::size_t>(i)] == 1) small_st[static_cast<std::size_t>(i)] = 0;
  const std::int64_t n = big.numel();
  const T* bp = big.data();
  T* sp = small.data();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t so = 0;
    for (int a = 0; a < r; ++a) so += idx[static_cast<std::size_t>(a)] * small_st[static_cast<std::size_t>(a)];
    sp[so] += bp[i];
    for (int a = r - 1; a >= 0; --a) {
      if (++idx[static_cast<std::size_t>(a)] < bs[static_cast<std::size_t>(a)]) break;
      idx[static_cast<std::size_t>(a)] = 0;
    }
  }
}

}  // namespace

ConvGeom same_padding(const Shape& in_sp, std::vector<int> kernel, std::vector<int> stride,
                      std::vector<int> dilation) {
  ConvGeom g;
  g.kernel = std::move(kernel);
  g.stride = std::move(stride);
  g.dilation = std::move(dilation);
  const std::size_t S = g.kernel.size();
  g.pad_beg.resize(S);
  g.pad_end.resize(S);
  for (std::size_t a = 0; a < S; ++a) {
    const std::int64_t in = in_sp[a];
    const std::int64_t out = (in + g.stride[a] - 1) / g.stride[a];
    const std::int64_t eff_k = static_cast<std::int64_t>(g.kernel[a] - 1) * g.dilation[a] + 1;
    const std::int64_t total = std::max<std::int64_t>((out - 1) * g.stride[a] + eff_k - in, 0);
    g.pad_beg[a] = static_cast<int>(total / 2);
    g.pad_end[a] = static_cast<int>(total - total / 2);
  }
  return g;
}

ConvGeom valid_padding(std::vector<int> kernel, std::vector<int> stride,
                       std::vector<int> dilation) {
  ConvGeom g;
  g.kernel = std::move(kernel);
  g.stride = std::move(stride);
  g.dilation = std::move(dilation);
  g.pad_beg.assign(g.kernel.size(), 0);
  g.pad_end.assign(g.kernel.size(), 0);
  return g;
}

Shape conv_output_spatial(const Shape& in_sp, const ConvGeom& g) {
  Shape out(in_sp.size());
  for (std::size_t a = 0; a < in_sp.size(); ++a) {
    const std::int64_t eff_k = static_cast<std::int64_t>(g.kernel[a] - 1) * g.dilation[a] + 1;
    const std::int64_t padded = in_sp[a] + g.pad_beg[a] + g.pad_end[a];
    if (padded < eff_k)
      throw ShapeError("conv: input extent " + std::to_string(in_sp[a]) +
                       " too small for kernel");
    out[a] = (padded - eff_k) / g.stride[a] + 1;
  }
  return out;
}

template <typename T>
Var<T> Graph<T>::make_node(Tensor<T> value, std::vector<Var<T>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  if (grad_enabled)
    for (auto& p : n->parents)
      if (p->requires_grad) {
        n->requires_grad = true;
        break;
      }
  tape_.push_back(n);
  return n;
}

template <typename T>
Var<T> Graph<T>::leaf(Tensor<T> v, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = requires_grad && grad_enabled;
  tape_.push_back(n);
  return n;
}

template <typename T>
Var<T> Graph<T>::param(Param<T>& p) {
  auto n = std::make_shared<Node<T>>();
  n->value = p.value;
  n->grad = p.grad;  // accumulate directly into the param
  n->requires_grad = p.trainable && grad_enabled;
  tape_.push_back(n);
  return n;
}

template <typename T>
Var<T> Graph<T>::detach(const Var<T>& x) {
  return leaf(x->value, false);
}

template <typename T>
void Graph<T>::backward(const Var<T>& loss) {
  ensure_grad(*loss);
  loss->grad.fill(T(1));
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node<T>& n = **it;
    if (n.requires_grad && n.backprop && n.grad.defined()) n.backprop(n);
  }
}

// ---- elementwise ----------------------------------------------------------

// Template-lambda unary op: forward and d/dx are inlined, no per-element
// std::function indirection.
template <typename T, class Fwd, class Dfdx>
Var<T> unary_op(Graph<T>& g, Var<T> a, Fwd f, Dfdx dfdx) {
  Tensor<T> y(a->value.shape());
  const T* x = a->value.data();
  T* yp = y.data();
  const std::int64_t n = y.numel();
  for (std::int64_t i = 0; i < n; ++i) yp[i] = f(x[i]);
  auto node = g.make_node(std::move(y), {a});
  if (node->requires_grad)
    node->backprop = [a, dfdx](Node<T>& self) {
      ensure_grad(*a);
      const T* x = a->value.data();
      const T* yv = self.value.data();
      const T* dy = self.grad.data();
      T* dx = a->grad.data();
      const std::int64_t n = self.value.numel();
      for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * dfdx(x[i], yv[i]);
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::add(Var<T> a, Var<T> b) {
  if (!a->value.same_shape(b->value)) throw ShapeError("add: shape mismatch");
  Tensor<T> y(a->value.shape());
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* py = y.data();
  for (std::int64_t i = 0; i < y.numel(); ++i) py[i] = pa[i] + pb[i];
  auto node = make_node(std::move(y), {a, b});
  if (node->requires_grad)
    node->backprop = [a, b](Node<T>& self) {
      const T* dy = self.grad.data();
      const std::int64_t n = self.grad.numel();
      for (auto& p : {a, b})
        if (p->requires_grad) {
          ensure_grad(*p);
          T* d = p->grad.data();
          for (std::int64_t i = 0; i < n; ++i) d[i] += dy[i];
        }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::sub(Var<T> a, Var<T> b) {
  if (!a->value.same_shape(b->value)) throw ShapeError("sub: shape mismatch");
  Tensor<T> y(a->value.shape());
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* py = y.data();
  for (std::int64_t i = 0; i < y.numel(); ++i) py[i] = pa[i] - pb[i];
  auto node = make_node(std::move(y), {a, b});
  if (node->requires_grad)
    node->backprop = [a, b](Node<T>& self) {
      const T* dy = self.grad.data();
      const std::int64_t n = self.grad.numel();
      if (a->requires_grad) {
        ensure_grad(*a);
        T* d = a->grad.data();
        for (std::int64_t i = 0; i < n; ++i) d[i] += dy[i];
      }
      if (b->requires_grad) {
        ensure_grad(*b);
        T* d = b->grad.data();
        for (std::int64_t i = 0; i < n; ++i) d[i] -= dy[i];
      }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::mul(Var<T> a, Var<T> b) {
  if (!a->value.same_shape(b->value)) throw ShapeError("mul: shape mismatch");
  Tensor<T> y(a->value.shape());
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* py = y.data();
  for (std::int64_t i = 0; i < y.numel(); ++i) py[i] = pa[i] * pb[i];
  auto node = make_node(std::move(y), {a, b});
  if (node->requires_grad)
    node->backprop = [a, b](Node<T>& self) {
      const T* dy = self.grad.data();
      const std::int64_t n = self.grad.numel();
      if (a->requires_grad) {
        ensure_grad(*a);
        T* d = a->grad.data();
        const T* pb = b->value.data();
        for (std::int64_t i = 0; i < n; ++i) d[i] += dy[i] * pb[i];
      }
      if (b->requires_grad) {
        ensure_grad(*b);
        T* d = b->grad.data();
        const T* pa = a->value.data();
        for (std::int64_t i = 0; i < n; ++i) d[i] += dy[i] * pa[i];
      }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::mul_bcast(Var<T> a, Var<T> b) {
  if (a->value.rank() != b->value.rank()) throw ShapeError("mul_bcast: rank mismatch");
  for (int i = 0; i < a->value.rank(); ++i)
    if (b->value.dim(i) != a->value.dim(i) && b->value.dim(i) != 1)
      throw ShapeError("mul_bcast: incompatible dims");
  Tensor<T> bx(a->value.shape());
  bcast_expand(b->value, bx);
  Tensor<T> y(a->value.shape());
  const T* pa = a->value.data();
  const T* pb = bx.data();
  T* py = y.data();
  for (std::int64_t i = 0; i < y.numel(); ++i) py[i] = pa[i] * pb[i];
  auto node = make_node(std::move(y), {a, b});
  if (node->requires_grad)
    node->backprop = [a, b, bx](Node<T>& self) {
      const T* dy = self.grad.data();
      const std::int64_t n = self.grad.numel();
      if (a->requires_grad) {
        ensure_grad(*a);
        T* d = a->grad.data();
        const T* pb = bx.data();
        for (std::int64_t i = 0; i < n; ++i) d[i] += dy[i] * pb[i];
      }
      if (b->requires_grad) {
        ensure_grad(*b);
        Tensor<T> tmp(a->value.shape());
        const T* pa = a->value.data();
        T* tp = tmp.data();
        for (std::int64_t i = 0; i < n; ++i) tp[i] = dy[i] * pa[i];
        bcast_reduce_add(tmp, b->grad);
      }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::scale(Var<T> a, T c) {
  return unary_op(*this, a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> Graph<T>::add_scalar(Var<T> a, T c) {
  return unary_op(*this, a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> Graph<T>::abs_(Var<T> a) {
  return unary_op(
      *this, a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> Graph<T>::square_(Var<T> a) {
  return unary_op(*this, a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> Graph<T>::sqrt_(Var<T> a) {
  return unary_op(
      *this, a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return y > T(0) ? T(1) / (T(2) * y) : T(0); });
}

template <typename T>
Var<T> Graph<T>::recip_guarded(Var<T> a, T eps) {
  return unary_op(
      *this, a, [eps](T x) { return T(1) / std::max(x, eps); },
      [eps](T x, T y) { return x > eps ? -y * y : T(0); });
}

template <typename T>
Var<T> Graph<T>::log_clamped(Var<T> a, T eps) {
  return unary_op(
      *this, a, [eps](T x) { return std::log(std::max(x, eps)); },
      [eps](T x, T) { return x > eps ? T(1) / x : T(0); });
}

template <typename T>
Var<T> Graph<T>::relu(Var<T> a) {
  return unary_op(
      *this, a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> Graph<T>::lrelu(Var<T> a, T slope) {
  return unary_op(
      *this, a, [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> Graph<T>::tanh_(Var<T> a) {
  return unary_op(*this, a, [](T x) { return std::tanh(x); },
                  [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> Graph<T>::sigmoid_(Var<T> a) {
  return unary_op(
      *this, a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> Graph<T>::dropout(Var<T> a, double rate) {
  if (!train_mode || rate <= 0.0) return a;
  if (!rng) throw Error("dropout: graph has no rng");
  const T keep = static_cast<T>(1.0 - rate);
  Tensor<T> mask(a->value.shape());
  T* mp = mask.data();
  for (std::int64_t i = 0; i < mask.numel(); ++i)
    mp[i] = rng->uniform() >= rate ? T(1) / keep : T(0);
  Tensor<T> y(a->value.shape());
  const T* x = a->value.data();
  T* yp = y.data();
  for (std::int64_t i = 0; i < y.numel(); ++i) yp[i] = x[i] * mp[i];
  auto node = make_node(std::move(y), {a});
  if (node->requires_grad)
    node->backprop = [a, mask](Node<T>& self) {
      ensure_grad(*a);
      const T* dy = self.grad.data();
      const T* mp = mask.data();
      T* dx = a->grad.data();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) dx[i] += dy[i] * mp[i];
    };
  return node;
}

// ---- dense / softmax ------------------------------------------------------

template <typename T>
Var<T> Graph<T>::matmul(Var<T> x, Var<T> w) {
  if (x->value.rank() != 2 || w->value.rank() != 2 || x->value.dim(1) != w->value.dim(0))
    throw ShapeError("matmul: need [N,d]x[d,u]");
  const std::int64_t N = x->value.dim(0), d = x->value.dim(1), u = w->value.dim(1);
  Tensor<T> y({N, u});
  EMap<T>(y.data(), N, u).noalias() =
      ECMap<T>(x->value.data(), N, d) * ECMap<T>(w->value.data(), d, u);
  auto node = make_node(std::move(y), {x, w});
  if (node->requires_grad)
    node->backprop = [x, w, N, d, u](Node<T>& self) {
      ECMap<T> dy(self.grad.data(), N, u);
      if (x->requires_grad) {
        ensure_grad(*x);
        EMap<T>(x->grad.data(), N, d).noalias() += dy * ECMap<T>(w->value.data(), d, u).transpose();
      }
      if (w->requires_grad) {
        ensure_grad(*w);
        EMap<T>(w->grad.data(), d, u).noalias() +=
            ECMap<T>(x->value.data(), N, d).transpose() * dy;
      }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::softmax(Var<T> logits) {
  if (logits->value.rank() != 2) throw ShapeError("softmax: need [N,C]");
  const std::int64_t N = logits->value.dim(0), C = logits->value.dim(1);
  Tensor<T> y({N, C});
  const T* xp = logits->value.data();
  T* yp = y.data();
  for (std::int64_t i = 0; i < N; ++i) {
    const T* row = xp + i * C;
    T m = row[0];
    for (std::int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    T s = T(0);
    for (std::int64_t c = 0; c < C; ++c) {
      yp[i * C + c] = std::exp(row[c] - m);
      s += yp[i * C + c];
    }
    for (std::int64_t c = 0; c < C; ++c) yp[i * C + c] /= s;
  }
  auto node = make_node(std::move(y), {logits});
  if (node->requires_grad)
    node->backprop = [logits, N, C](Node<T>& self) {
      ensure_grad(*logits);
      const T* yv = self.value.data();
      const T* dy = self.grad.data();
      T* dx = logits->grad.data();
      for (std::int64_t i = 0; i < N; ++i) {
        T dot = T(0);
        for (std::int64_t c = 0; c < C; ++c) dot += dy[i * C + c] * yv[i * C + c];
        for (std::int64_t c = 0; c < C; ++c)
          dx[i * C + c] += (dy[i * C + c] - dot) * yv[i * C + c];
      }
    };
  return node;
}

// ---- convolution ----------------------------------------------------------

template <typename T>
Var<T> Graph<T>::conv(Var<T> x, Var<T> w, Var<T> b, const ConvGeom& g) {
  const int S = static_cast<int>(g.kernel.size());
  if (x->value.rank() != S + 2) throw ShapeError("conv: input rank mismatch");
  const std::int64_t Cin = x->value.dim(S + 1);
  const std::int64_t Cout = w->value.dim(1);
  std::int64_t taps = 1;
  for (auto k : g.kernel) taps *= k;
  if (w->value.dim(0) != taps * Cin)
    throw ShapeError("conv: weight rows " + std::to_string(w->value.dim(0)) +
                     " != taps*Cin " + std::to_string(taps * Cin));

  Shape in_sp(x->value.shape().begin() + 1, x->value.shape().end() - 1);
  Shape out_sp = conv_output_spatial(in_sp, g);
  PatchGeom pg = make_patch_geom(x->value.shape(), out_sp, g);

  Shape out_shape;
  out_shape.push_back(x->value.dim(0));
  for (auto d : out_sp) out_shape.push_back(d);
  out_shape.push_back(Cout);
  Tensor<T> y(out_shape);

  const std::int64_t chunk = chunk_rows(pg.cols, sizeof(T));
  std::vector<T> colbuf(static_cast<std::size_t>(chunk * pg.cols));
  for (std::int64_t r0 = 0; r0 < pg.rows; r0 += chunk) {
    const std::int64_t nr = std::min(chunk, pg.rows - r0);
    im2col_rows(x->value.data(), pg, r0, nr, colbuf.data());
    EMap<T>(y.data() + r0 * Cout, nr, Cout).noalias() =
        ECMap<T>(colbuf.data(), nr, pg.cols) * ECMap<T>(w->value.data(), pg.cols, Cout);
  }
  if (b) {
    T* yp = y.data();
    const T* bp = b->value.data();
    for (std::int64_t r = 0; r < pg.rows; ++r)
      for (std::int64_t c = 0; c < Cout; ++c) yp[r * Cout + c] += bp[c];
  }

  std::vector<Var<T>> parents = {x, w};
  if (b) parents.push_back(b);
  auto node = make_node(std::move(y), std::move(parents));
  if (node->requires_grad)
    node->backprop = [x, w, b, pg, Cout](Node<T>& self) {
      const std::int64_t chunk = chunk_rows(pg.cols, sizeof(T));
      std::vector<T> colbuf(static_cast<std::size_t>(chunk * pg.cols));
      const bool need_dx = x->requires_grad;
      const bool need_dw = w->requires_grad;
      if (need_dx) ensure_grad(*x);
      if (need_dw) ensure_grad(*w);
      for (std::int64_t r0 = 0; r0 < pg.rows; r0 += chunk) {
        const std::int64_t nr = std::min(chunk, pg.rows - r0);
        ECMap<T> dy(self.grad.data() + r0 * Cout, nr, Cout);
        if (need_dw) {
          im2col_rows(x->value.data(), pg, r0, nr, colbuf.data());
          EMap<T>(w->grad.data(), pg.cols, Cout).noalias() +=
              ECMap<T>(colbuf.data(), nr, pg.cols).transpose() * dy;
        }
        if (need_dx) {
          EMap<T>(colbuf.data(), nr, pg.cols).noalias() =
              dy * ECMap<T>(w->value.data(), pg.cols, Cout).transpose();
          col2im_add_rows(colbuf.data(), pg, r0, nr, x->grad.data());
        }
      }
      if (b && b->requires_grad) {
        ensure_grad(*b);
        const T* dyp = self.grad.data();
        T* db = b->grad.data();
        for (std::int64_t r = 0; r < pg.rows; ++r)
          for (std::int64_t c = 0; c < Cout; ++c) db[c] += dyp[r * Cout + c];
      }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::conv_transpose(Var<T> x, Var<T> w, Var<T> b, const ConvGeom& adjoint,
                                Shape out_sp) {
  // x: [N, in_sp, Cin]; w: [taps*Cout, Cin] (weights of the adjoint conv,
  // which maps [N, out_sp, Cout] -> [N, in_sp, Cin]); y: [N, out_sp, Cout].
  const int S = static_cast<int>(adjoint.kernel.size());
  if (x->value.rank() != S + 2) throw ShapeError("conv_transpose: input rank mismatch");
  const std::int64_t N = x->value.dim(0);
  const std::int64_t Cin = x->value.dim(S + 1);
  std::int64_t taps = 1;
  for (auto k : adjoint.kernel) taps *= k;
  if (w->value.dim(1) != Cin) throw ShapeError("conv_transpose: weight Cin mismatch");
  const std::int64_t Cout = w->value.dim(0) / taps;

  Shape in_sp(x->value.shape().begin() + 1, x->value.shape().end() - 1);
  Shape y_shape;
  y_shape.push_back(N);
  for (auto d : out_sp) y_shape.push_back(d);
  y_shape.push_back(Cout);
  Tensor<T> y(y_shape);

  {
    Shape check = conv_output_spatial(out_sp, adjoint);
    if (check != in_sp) throw ShapeError("conv_transpose: geometry does not invert");
  }
  PatchGeom pg = make_patch_geom(y_shape, in_sp, adjoint);  // src = y, dst rows = x voxels

  const std::int64_t chunk = chunk_rows(pg.cols, sizeof(T));
  std::vector<T> colbuf(static_cast<std::size_t>(chunk * pg.cols));
  for (std::int64_t r0 = 0; r0 < pg.rows; r0 += chunk) {
    const std::int64_t nr = std::min(chunk, pg.rows - r0);
    EMap<T>(colbuf.data(), nr, pg.cols).noalias() =
        ECMap<T>(x->value.data() + r0 * Cin, nr, Cin) *
        ECMap<T>(w->value.data(), pg.cols, Cin).transpose();
    col2im_add_rows(colbuf.data(), pg, r0, nr, y.data());
  }
  if (b) {
    T* yp = y.data();
    const T* bp = b->value.data();
    const std::int64_t yrows = y.numel() / Cout;
    for (std::int64_t r = 0; r < yrows; ++r)
      for (std::int64_t c = 0; c < Cout; ++c) yp[r * Cout + c] += bp[c];
  }

  std::vector<Var<T>> parents = {x, w};
  if (b) parents.push_back(b);
  auto node = make_node(std::move(y), std::move(parents));
  if (node->requires_grad)
    node->backprop = [x, w, b, pg, Cin, Cout](Node<T>& self) {
      const std::int64_t chunk = chunk_rows(pg.cols, sizeof(T));
      std::vector<T> colbuf(static_cast<std::size_t>(chunk * pg.cols));
      const bool need_dx = x->requires_grad;
      const bool need_dw = w->requires_grad;
      if (need_dx) ensure_grad(*x);
      if (need_dw) ensure_grad(*w);
      for (std::int64_t r0 = 0; r0 < pg.rows; r0 += chunk) {
        const std::int64_t nr = std::min(chunk, pg.rows - r0);
        im2col_rows(self.grad.data(), pg, r0, nr, colbuf.data());
        if (need_dx)
          EMap<T>(x->grad.data() + r0 * Cin, nr, Cin).noalias() +=
              ECMap<T>(colbuf.data(), nr, pg.cols) * ECMap<T>(w->value.data(), pg.cols, Cin);
        if (need_dw)
          EMap<T>(w->grad.data(), pg.cols, Cin).noalias() +=
              ECMap<T>(colbuf.data(), nr, pg.cols).transpose() *
              ECMap<T>(x->value.data() + r0 * Cin, nr, Cin);
      }
      if (b && b->requires_grad) {
        ensure_grad(*b);
        const T* dyp = self.grad.data();
        T* db = b->grad.data();
        const std::int64_t yrows = self.grad.numel() / Cout;
        for (std::int64_t r = 0; r < yrows; ++r)
          for (std::int64_t c = 0; c < Cout; ++c) db[c] += dyp[r * Cout + c];
      }
    };
  return node;
}

// ---- pooling / resampling -------------------------------------------------

template <typename T>
Var<T> Graph<T>::maxpool(Var<T> x, std::vector<int> kernel, std::vector<int> stride,
                         bool same) {
  const int S = static_cast<int>(kernel.size());
  if (x->value.rank() != S + 2) throw ShapeError("maxpool: input rank mismatch");
  Shape in_sp(x->value.shape().begin() + 1, x->value.shape().end() - 1);
  std::vector<int> dil(static_cast<std::size_t>(S), 1);
  ConvGeom g = same ? same_padding(in_sp, kernel, stride, dil)
                    : valid_padding(kernel, stride, dil);
  Shape out_sp = conv_output_spatial(in_sp, g);

  const std::int64_t N = x->value.dim(0), C = x->value.dim(S + 1);
  Shape out_shape;
  out_shape.push_back(N);
  for (auto d : out_sp) out_shape.push_back(d);
  out_shape.push_back(C);
  Tensor<T> y(out_shape);
  Tensor<std::int64_t> arg_t(out_shape);  // linear index into x per output element

  std::int64_t out_vox = 1;
  for (auto d : out_sp) out_vox *= d;
  std::int64_t in_vox = 1;
  for (auto d : in_sp) in_vox *= d;
  std::int64_t in_st[3] = {1, 1, 1};
  for (int a = S - 2; a >= 0; --a) in_st[a] = in_st[a + 1] * in_sp[static_cast<std::size_t>(a + 1)];

  const T* xp = x->value.data();
  T* yp = y.data();
  std::int64_t* ap = arg_t.data();
  std::int64_t taps = 1;
  for (auto k : kernel) taps *= k;

  for (std::int64_t n = 0; n < N; ++n) {
    const T* xn = xp + n * in_vox * C;
    for (std::int64_t ov = 0; ov < out_vox; ++ov) {
      std::int64_t rem = ov;
      std::int64_t op[3] = {0, 0, 0};
      for (int a = S - 1; a >= 0; --a) {
        op[a] = rem % out_sp[static_cast<std::size_t>(a)];
        rem /= out_sp[static_cast<std::size_t>(a)];
      }
      T* yrow = yp + (n * out_vox + ov) * C;
      std::int64_t* arow = ap + (n * out_vox + ov) * C;
      for (std::int64_t c = 0; c < C; ++c) {
        yrow[c] = -std::numeric_limits<T>::infinity();
        arow[c] = -1;
      }
      std::int64_t tap[3] = {0, 0, 0};
      for (std::int64_t t = 0; t < taps; ++t) {
        bool ok = true;
        std::int64_t off = 0;
        for (int a = 0; a < S; ++a) {
          const std::int64_t ip =
              op[a] * g.stride[static_cast<std::size_t>(a)] + tap[a] - g.pad_beg[static_cast<std::size_t>(a)];
          if (ip < 0 || ip >= in_sp[static_cast<std::size_t>(a)]) {
            ok = false;
            break;
          }
          off += ip * in_st[a];
        }
        if (ok) {
          const T* src = xn + off * C;
          const std::int64_t base = n * in_vox * C + off * C;
          for (std::int64_t c = 0; c < C; ++c)
            if (src[c] > yrow[c]) {
              yrow[c] = src[c];
              arow[c] = base + c;
            }
        }
        for (int a = S - 1; a >= 0; --a) {
          if (++tap[a] < kernel[static_cast<std::size_t>(a)]) break;
          tap[a] = 0;
        }
      }
    }
  }

  auto node = make_node(std::move(y), {x});
  if (node->requires_grad)
    node->backprop = [x, arg_t](Node<T>& self) {
      ensure_grad(*x);
      const T* dy = self.grad.data();
      const std::int64_t* ap = arg_t.data();
      T* dx = x->grad.data();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i)
        if (ap[i] >= 0) dx[ap[i]] += dy[i];
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::gap(Var<T> x) {
  const int r = x->value.rank();
  const std::int64_t N = x->value.dim(0), C = x->value.dim(r - 1);
  std::int64_t vox = 1;
  for (int a = 1; a < r - 1; ++a) vox *= x->value.dim(a);
  if (vox < 1) throw ShapeError("gap: empty spatial extent");
  Tensor<T> y({N, C});
  const T* xp = x->value.data();
  T* yp = y.data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t v = 0; v < vox; ++v) {
      const T* row = xp + (n * vox + v) * C;
      T* out = yp + n * C;
      for (std::int64_t c = 0; c < C; ++c) out[c] += row[c];
    }
  const T inv = T(1) / static_cast<T>(vox);
  for (std::int64_t i = 0; i < y.numel(); ++i) yp[i] *= inv;
  auto node = make_node(std::move(y), {x});
  if (node->requires_grad)
    node->backprop = [x, N, C, vox, inv](Node<T>& self) {
      ensure_grad(*x);
      const T* dy = self.grad.data();
      T* dx = x->grad.data();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t v = 0; v < vox; ++v) {
          T* row = dx + (n * vox + v) * C;
          const T* g = dy + n * C;
          for (std::int64_t c = 0; c < C; ++c) row[c] += g[c] * inv;
        }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::upsample_nn(Var<T> x, int factor) {
  const int r = x->value.rank();
  const int S = r - 2;
  const std::int64_t N = x->value.dim(0), C = x->value.dim(r - 1);
  Shape in_sp(x->value.shape().begin() + 1, x->value.shape().end() - 1);
  Shape out_sp = in_sp;
  for (auto& d : out_sp) d *= factor;
  Shape out_shape;
  out_shape.push_back(N);
  for (auto d : out_sp) out_shape.push_back(d);
  out_shape.push_back(C);
  Tensor<T> y(out_shape);

  std::int64_t out_vox = 1;
  for (auto d : out_sp) out_vox *= d;
  std::int64_t in_vox = 1;
  for (auto d : in_sp) in_vox *= d;
  std::int64_t in_st[3] = {1, 1, 1};
  for (int a = S - 2; a >= 0; --a) in_st[a] = in_st[a + 1] * in_sp[static_cast<std::size_t>(a + 1)];

  auto src_index = [&](std::int64_t ov) {
    std::int64_t rem = ov, off = 0;
    for (int a = S - 1; a >= 0; --a) {
      const std::int64_t o = rem % out_sp[static_cast<std::size_t>(a)];
      rem /= out_sp[static_cast<std::size_t>(a)];
      off += (o / factor) * in_st[a];
    }
    return off;
  };

  const T* xp = x->value.data();
  T* yp = y.data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t ov = 0; ov < out_vox; ++ov)
      std::memcpy(yp + (n * out_vox + ov) * C, xp + (n * in_vox + src_index(ov)) * C,
                  sizeof(T) * static_cast<std::size_t>(C));

  auto node = make_node(std::move(y), {x});
  if (node->requires_grad)
    node->backprop = [x, N, C, out_sp, in_st, in_vox, out_vox, factor, S](Node<T>& self) {
      ensure_grad(*x);
      const T* dy = self.grad.data();
      T* dx = x->grad.data();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t ov = 0; ov < out_vox; ++ov) {
          std::int64_t rem = ov, off = 0;
          for (int a = S - 1; a >= 0; --a) {
            const std::int64_t o = rem % out_sp[static_cast<std::size_t>(a)];
            rem /= out_sp[static_cast<std::size_t>(a)];
            off += (o / factor) * in_st[a];
          }
          const T* g = dy + (n * out_vox + ov) * C;
          T* d = dx + (n * in_vox + off) * C;
          for (std::int64_t c = 0; c < C; ++c) d[c] += g[c];
        }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::resize_linear(Var<T> x, Shape out_sp) {
  const int r = x->value.rank();
  const int S = r - 2;
  if (static_cast<int>(out_sp.size()) != S) throw ShapeError("resize_linear: rank mismatch");
  const std::int64_t N = x->value.dim(0), C = x->value.dim(r - 1);
  Shape in_sp(x->value.shape().begin() + 1, x->value.shape().end() - 1);

  // Per-axis corner indices and weights (align-corners convention).
  struct AxisMap {
    std::vector<std::int64_t> i0, i1;
    std::vector<double> w1;
  };
  std::vector<AxisMap> maps(static_cast<std::size_t>(S));
  for (int a = 0; a < S; ++a) {
    auto& m = maps[static_cast<std::size_t>(a)];
    const std::int64_t in = in_sp[static_cast<std::size_t>(a)], out = out_sp[static_cast<std::size_t>(a)];
    m.i0.resize(static_cast<std::size_t>(out));
    m.i1.resize(static_cast<std::size_t>(out));
    m.w1.resize(static_cast<std::size_t>(out));
    for (std::int64_t o = 0; o < out; ++o) {
      double src = (out > 1 && in > 1)
                       ? static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1)
                       : 0.0;
      std::int64_t lo = static_cast<std::int64_t>(std::floor(src));
      lo = std::min(lo, in - 1);
      std::int64_t hi = std::min(lo + 1, in - 1);
      m.i0[static_cast<std::size_t>(o)] = lo;
      m.i1[static_cast<std::size_t>(o)] = hi;
      m.w1[static_cast<std::size_t>(o)] = src - static_cast<double>(lo);
    }
  }

  Shape out_shape;
  out_shape.push_back(N);
  for (auto d : out_sp) out_shape.push_back(d);
  out_shape.push_back(C);
  Tensor<T> y(out_shape);

  std::int64_t in_vox = 1, out_vox = 1;
  for (auto d : in_sp) in_vox *= d;
  for (auto d : out_sp) out_vox *= d;
  std::int64_t in_st[3] = {1, 1, 1};
  for (int a = S - 2; a >= 0; --a) in_st[a] = in_st[a + 1] * in_sp[static_cast<std::size_t>(a + 1)];

  const int corners = 1 << S;
  const T* xp = x->value.data();
  T* yp = y.data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t ov = 0; ov < out_vox; ++ov) {
      std::int64_t rem = ov;
      std::int64_t o[3] = {0, 0, 0};
      for (int a = S - 1; a >= 0; --a) {
        o[a] = rem % out_sp[static_cast<std::size_t>(a)];
        rem /= out_sp[static_cast<std::size_t>(a)];
      }
      T* out_row = yp + (n * out_vox + ov) * C;
      for (int cr = 0; cr < corners; ++cr) {
        double wgt = 1.0;
        std::int64_t off = 0;
        for (int a = 0; a < S; ++a) {
          const auto& m = maps[static_cast<std::size_t>(a)];
          const bool hi = (cr >> a) & 1;
          wgt *= hi ? m.w1[static_cast<std::size_t>(o[a])] : 1.0 - m.w1[static_cast<std::size_t>(o[a])];
          off += (hi ? m.i1[static_cast<std::size_t>(o[a])] : m.i0[static_cast<std::size_t>(o[a])]) * in_st[a];
        }
        if (wgt == 0.0) continue;
        const T* src = xp + (n * in_vox + off) * C;
        const T w = static_cast<T>(wgt);
        for (std::int64_t c = 0; c < C; ++c) out_row[c] += w * src[c];
      }
    }

  auto node = make_node(std::move(y), {x});
  if (node->requires_grad)
    node->backprop = [x, maps, N, C, out_sp, in_st, in_vox, out_vox, S, corners](Node<T>& self) {
      ensure_grad(*x);
      const T* dy = self.grad.data();
      T* dx = x->grad.data();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t ov = 0; ov < out_vox; ++ov) {
          std::int64_t rem = ov;
          std::int64_t o[3] = {0, 0, 0};
          for (int a = S - 1; a >= 0; --a) {
            o[a] = rem % out_sp[static_cast<std::size_t>(a)];
            rem /= out_sp[static_cast<std::size_t>(a)];
          }
          const T* g = dy + (n * out_vox + ov) * C;
          for (int cr = 0; cr < corners; ++cr) {
            double wgt = 1.0;
            std::int64_t off = 0;
            for (int a = 0; a < S; ++a) {
              const auto& m = maps[static_cast<std::size_t>(a)];
              const bool hi = (cr >> a) & 1;
              wgt *= hi ? m.w1[static_cast<std::size_t>(o[a])] : 1.0 - m.w1[static_cast<std::size_t>(o[a])];
              off += (hi ? m.i1[static_cast<std::size_t>(o[a])] : m.i0[static_cast<std::size_t>(o[a])]) * in_st[a];
            }
            if (wgt == 0.0) continue;
            T* d = dx + (n * in_vox + off) * C;
            const T w = static_cast<T>(wgt);
            for (std::int64_t c = 0; c < C; ++c) d[c] += w * g[c];
          }
        }
    };
  return node;
}

// ---- shape plumbing -------------------------------------------------------

template <typename T>
Var<T> Graph<T>::concat_ch(Var<T> a, Var<T> b) {
  const int r = a->value.rank();
  if (b->value.rank() != r) throw ShapeError("concat_ch: rank mismatch");
  for (int i = 0; i < r - 1; ++i)
    if (a->value.dim(i) != b->value.dim(i)) throw ShapeError("concat_ch: non-channel dims differ");
  const std::int64_t Ca = a->value.dim(r - 1), Cb = b->value.dim(r - 1);
  Shape out = a->value.shape();
  out.back() = Ca + Cb;
  Tensor<T> y(out);
  const std::int64_t rows = y.numel() / (Ca + Cb);
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* py = y.data();
  for (std::int64_t rix = 0; rix < rows; ++rix) {
    std::memcpy(py + rix * (Ca + Cb), pa + rix * Ca, sizeof(T) * static_cast<std::size_t>(Ca));
    std::memcpy(py + rix * (Ca + Cb) + Ca, pb + rix * Cb, sizeof(T) * static_cast<std::size_t>(Cb));
  }
  auto node = make_node(std::move(y), {a, b});
  if (node->requires_grad)
    node->backprop = [a, b, Ca, Cb, rows](Node<T>& self) {
      const T* dy = self.grad.data();
      if (a->requires_grad) {
        ensure_grad(*a);
        T* d = a->grad.data();
        for (std::int64_t rix = 0; rix < rows; ++rix)
          for (std::int64_t c = 0; c < Ca; ++c) d[rix * Ca + c] += dy[rix * (Ca + Cb) + c];
      }
      if (b->requires_grad) {
        ensure_grad(*b);
        T* d = b->grad.data();
        for (std::int64_t rix = 0; rix < rows; ++rix)
          for (std::int64_t c = 0; c < Cb; ++c) d[rix * Cb + c] += dy[rix * (Ca + Cb) + Ca + c];
      }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::crop_or_pad_center(Var<T> x, Shape target_sp) {
  const int r = x->value.rank();
  const int S = r - 2;
  Shape in_sp(x->value.shape().begin() + 1, x->value.shape().end() - 1);
  if (static_cast<int>(target_sp.size()) != S) throw ShapeError("crop_or_pad: rank mismatch");
  if (in_sp == target_sp) return x;

  const std::int64_t N = x->value.dim(0), C = x->value.dim(r - 1);
  // off[a]: coordinate of target origin in input space (negative => padding).
  std::vector<std::int64_t> off(static_cast<std::size_t>(S));
  for (int a = 0; a < S; ++a)
    off[static_cast<std::size_t>(a)] =
        (in_sp[static_cast<std::size_t>(a)] - target_sp[static_cast<std::size_t>(a)]) / 2;

  Shape out_shape;
  out_shape.push_back(N);
  for (auto d : target_sp) out_shape.push_back(d);
  out_shape.push_back(C);
  Tensor<T> y(out_shape);

  std::int64_t in_vox = 1, out_vox = 1;
  for (auto d : in_sp) in_vox *= d;
  for (auto d : target_sp) out_vox *= d;
  std::int64_t in_st[3] = {1, 1, 1};
  for (int a = S - 2; a >= 0; --a) in_st[a] = in_st[a + 1] * in_sp[static_cast<std::size_t>(a + 1)];

  const T* xp = x->value.data();
  T* yp = y.data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t ov = 0; ov < out_vox; ++ov) {
      std::int64_t rem = ov, in_off = 0;
      bool ok = true;
      for (int a = S - 1; a >= 0; --a) {
        const std::int64_t o = rem % target_sp[static_cast<std::size_t>(a)];
        rem /= target_sp[static_cast<std::size_t>(a)];
        const std::int64_t ip = o + off[static_cast<std::size_t>(a)];
        if (ip < 0 || ip >= in_sp[static_cast<std::size_t>(a)]) {
          ok = false;
          break;
        }
        in_off += ip * in_st[a];
      }
      if (ok)
        std::memcpy(yp + (n * out_vox + ov) * C, xp + (n * in_vox + in_off) * C,
                    sizeof(T) * static_cast<std::size_t>(C));
    }

  auto node = make_node(std::move(y), {x});
  if (node->requires_grad)
    node->backprop = [x, off, N, C, in_sp, target_sp, in_st, in_vox, out_vox, S](Node<T>& self) {
      ensure_grad(*x);
      const T* dy = self.grad.data();
      T* dx = x->grad.data();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t ov = 0; ov < out_vox; ++ov) {
          std::int64_t rem = ov, in_off = 0;
          bool ok = true;
          for (int a = S - 1; a >= 0; --a) {
            const std::int64_t o = rem % target_sp[static_cast<std::size_t>(a)];
            rem /= target_sp[static_cast<std::size_t>(a)];
            const std::int64_t ip = o + off[static_cast<std::size_t>(a)];
            if (ip < 0 || ip >= in_sp[static_cast<std::size_t>(a)]) {
              ok = false;
              break;
            }
            in_off += ip * in_st[a];
          }
          if (!ok) continue;
          const T* g = dy + (n * out_vox + ov) * C;
          T* d = dx + (n * in_vox + in_off) * C;
          for (std::int64_t c = 0; c < C; ++c) d[c] += g[c];
        }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::broadcast_to(Var<T> x, Shape target) {
  if (x->value.rank() != static_cast<int>(target.size()))
    throw ShapeError("broadcast_to: rank mismatch");
  for (int i = 0; i < x->value.rank(); ++i)
    if (x->value.dim(i) != target[static_cast<std::size_t>(i)] && x->value.dim(i) != 1)
      throw ShapeError("broadcast_to: incompatible dims");
  Tensor<T> y(target);
  bcast_expand(x->value, y);
  auto node = make_node(std::move(y), {x});
  if (node->requires_grad)
    node->backprop = [x](Node<T>& self) {
      ensure_grad(*x);
      bcast_reduce_add(self.grad, x->grad);
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::slice_axis(Var<T> x, int axis, std::int64_t start, std::int64_t len) {
  const int r = x->value.rank();
  if (axis < 0 || axis >= r || start < 0 || start + len > x->value.dim(axis))
    throw ShapeError("slice_axis: out of range");
  Shape out = x->value.shape();
  out[static_cast<std::size_t>(axis)] = len;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x->value.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x->value.dim(i);
  const std::int64_t ax = x->value.dim(axis);

  Tensor<T> y(out);
  const T* xp = x->value.data();
  T* yp = y.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(yp + o * len * inner, xp + (o * ax + start) * inner,
                sizeof(T) * static_cast<std::size_t>(len * inner));
  auto node = make_node(std::move(y), {x});
  if (node->requires_grad)
    node->backprop = [x, outer, inner, ax, start, len](Node<T>& self) {
      ensure_grad(*x);
      const T* dy = self.grad.data();
      T* dx = x->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        const T* g = dy + o * len * inner;
        T* d = dx + (o * ax + start) * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) d[i] += g[i];
      }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::reshape(Var<T> x, Shape s) {
  Tensor<T> y = x->value.reshaped(std::move(s));
  auto node = make_node(std::move(y), {x});
  if (node->requires_grad)
    node->backprop = [x](Node<T>& self) {
      ensure_grad(*x);
      const T* dy = self.grad.data();
      T* dx = x->grad.data();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) dx[i] += dy[i];
    };
  return node;
}

// ---- reductions -----------------------------------------------------------

template <typename T>
Var<T> Graph<T>::sum_axis_keep(Var<T> x, int axis) {
  const int r = x->value.rank();
  if (axis < 0 || axis >= r) throw ShapeError("sum_axis_keep: bad axis");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x->value.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x->value.dim(i);
  const std::int64_t ax = x->value.dim(axis);
  Shape out = x->value.shape();
  out[static_cast<std::size_t>(axis)] = 1;
  Tensor<T> y(out);
  const T* xp = x->value.data();
  T* yp = y.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t a = 0; a < ax; ++a)
      for (std::int64_t i = 0; i < inner; ++i) yp[o * inner + i] += xp[(o * ax + a) * inner + i];
  auto node = make_node(std::move(y), {x});
  if (node->requires_grad)
    node->backprop = [x, outer, inner, ax](Node<T>& self) {
      ensure_grad(*x);
      const T* dy = self.grad.data();
      T* dx = x->grad.data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t a = 0; a < ax; ++a)
          for (std::int64_t i = 0; i < inner; ++i)
            dx[(o * ax + a) * inner + i] += dy[o * inner + i];
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::sum_per_sample(Var<T> x) {
  const std::int64_t N = x->value.dim(0);
  const std::int64_t inner = x->value.numel() / N;
  Tensor<T> y({N});
  const T* xp = x->value.data();
  T* yp = y.data();
  for (std::int64_t n = 0; n < N; ++n) {
    T s = T(0);
    const T* row = xp + n * inner;
    for (std::int64_t i = 0; i < inner; ++i) s += row[i];
    yp[n] = s;
  }
  auto node = make_node(std::move(y), {x});
  if (node->requires_grad)
    node->backprop = [x, N, inner](Node<T>& self) {
      ensure_grad(*x);
      const T* dy = self.grad.data();
      T* dx = x->grad.data();
      for (std::int64_t n = 0; n < N; ++n) {
        T* row = dx + n * inner;
        for (std::int64_t i = 0; i < inner; ++i) row[i] += dy[n];
      }
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::sum_all(Var<T> x) {
  Tensor<T> y({1});
  const T* xp = x->value.data();
  T s = T(0);
  for (std::int64_t i = 0; i < x->value.numel(); ++i) s += xp[i];
  y[0] = s;
  auto node = make_node(std::move(y), {x});
  if (node->requires_grad)
    node->backprop = [x](Node<T>& self) {
      ensure_grad(*x);
      const T g = self.grad[0];
      T* dx = x->grad.data();
      for (std::int64_t i = 0; i < x->grad.numel(); ++i) dx[i] += g;
    };
  return node;
}

template <typename T>
Var<T> Graph<T>::mean_all(Var<T> x) {
  const T inv = T(1) / static_cast<T>(x->value.numel());
  return scale(sum_all(x), inv);
}

// ---- batch normalization ---------------------------------------------------

template <typename T>
Var<T> Graph<T>::batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& run_mean,
                           Tensor<T>& run_var, bool use_batch_stats, bool update_running,
                           T momentum, T eps) {
  const int r = x->value.rank();
  const std::int64_t C = x->value.dim(r - 1);
  const std::int64_t M = x->value.numel() / C;
  if (gamma->value.numel() != C || beta->value.numel() != C)
    throw ShapeError("batchnorm: gamma/beta size mismatch");

  Tensor<T> mean({C}), invstd({C});
  const T* xp = x->value.data();
  if (use_batch_stats) {
    Tensor<T> var({C});
    T* mp = mean.data();
    T* vp = var.data();
    for (std::int64_t i = 0; i < M; ++i) {
      const T* row = xp + i * C;
      for (std::int64_t c = 0; c < C; ++c) mp[c] += row[c];
    }
    for (std::int64_t c = 0; c < C; ++c) mp[c] /= static_cast<T>(M);
    for (std::int64_t i = 0; i < M; ++i) {
      const T* row = xp + i * C;
      for (std::int64_t c = 0; c < C; ++c) {
        const T d = row[c] - mp[c];
        vp[c] += d * d;
      }
    }
    for (std::int64_t c = 0; c < C; ++c) vp[c] /= static_cast<T>(M);
    if (update_running) {
      T* rm = run_mean.data();
      T* rv = run_var.data();
      for (std::int64_t c = 0; c < C; ++c) {
        rm[c] = momentum * rm[c] + (T(1) - momentum) * mp[c];
        rv[c] = momentum * rv[c] + (T(1) - momentum) * vp[c];
      }
    }
    T* ip = invstd.data();
    for (std::int64_t c = 0; c < C; ++c) ip[c] = T(1) / std::sqrt(vp[c] + eps);
  } else {
    std::memcpy(mean.data(), run_mean.data(), sizeof(T) * static_cast<std::size_t>(C));
    T* ip = invstd.data();
    const T* rv = run_var.data();
    for (std::int64_t c = 0; c < C; ++c) ip[c] = T(1) / std::sqrt(rv[c] + eps);
  }

  Tensor<T> y(x->value.shape());
  T* yp = y.data();
  {
    const T* mp = mean.data();
    const T* ip = invstd.data();
    const T* gp = gamma->value.data();
    const T* bp = beta->value.data();
    for (std::int64_t i = 0; i < M; ++i) {
      const T* row = xp + i * C;
      T* out = yp + i * C;
      for (std::int64_t c = 0; c < C; ++c) out[c] = gp[c] * (row[c] - mp[c]) * ip[c] + bp[c];
    }
  }

  const bool batch_stats = use_batch_stats;
  auto node = make_node(std::move(y), {x, gamma, beta});
  if (node->requires_grad)
    node->backprop = [x, gamma, beta, mean, invstd, M, C, batch_stats](Node<T>& self) {
      const T* dy = self.grad.data();
      const T* xp = x->value.data();
      const T* mp = mean.data();
      const T* ip = invstd.data();
      const T* gp = gamma->value.data();

      Tensor<T> dg({C}), db({C});
      T* dgp = dg.data();
      T* dbp = db.data();
      for (std::int64_t i = 0; i < M; ++i) {
        const T* g = dy + i * C;
        const T* row = xp + i * C;
        for (std::int64_t c = 0; c < C; ++c) {
          dgp[c] += g[c] * (row[c] - mp[c]) * ip[c];
          dbp[c] += g[c];
        }
      }
      if (gamma->requires_grad) {
        ensure_grad(*gamma);
        for (std::int64_t c = 0; c < C; ++c) gamma->grad[c] += dgp[c];
      }
      if (beta->requires_grad) {
        ensure_grad(*beta);
        for (std::int64_t c = 0; c < C; ++c) beta->grad[c] += dbp[c];
      }
      if (x->requires_grad) {
        ensure_grad(*x);
        T* dx = x->grad.data();
        if (batch_stats) {
          const T invM = T(1) / static_cast<T>(M);
          for (std::int64_t i = 0; i < M; ++i) {
            const T* g = dy + i * C;
            const T* row = xp + i * C;
            T* d = dx + i * C;
            for (std::int64_t c = 0; c < C; ++c) {
              const T xhat = (row[c] - mp[c]) * ip[c];
              d[c] += gp[c] * ip[c] * (g[c] - invM * dbp[c] - invM * xhat * dgp[c]);
            }
          }
        } else {
          for (std::int64_t i = 0; i < M; ++i) {
            const T* g = dy + i * C;
            T* d = dx + i * C;
            for (std::int64_t c = 0; c < C; ++c) d[c] += g[c] * gp[c] * ip[c];
          }
        }
      }
    };
  return node;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace lear

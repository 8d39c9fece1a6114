#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "hesscope/tensor.hpp"

// Reverse-mode differentiation over a dynamically built graph.
//
// Every backward rule is written with the same differentiable ops it
// differentiates, so a backward pass run with create_graph=true yields
// gradients that are themselves graph nodes. Differentiating ⟨∇L, v⟩ a second
// time gives the exact Hessian-vector product.

namespace hesscope::ad {

template <typename T>
class Var;

template <typename T>
using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>& grad)>;

template <typename T>
struct Node {
  BasicTensor<T> value;
  bool requires_grad = false;
  std::vector<Var<T>> inputs;
  BackwardFn<T> backward;
};

template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(BasicTensor<T> value);
  /// A differentiable input.
  static Var leaf(BasicTensor<T> value);
  /// Records an op node when grad mode is on and any input requires grad; otherwise a constant.
  static Var make(BasicTensor<T> value, std::vector<Var> inputs, BackwardFn<T> backward);

  bool defined() const { return node_ != nullptr; }
  const BasicTensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node<T>* node() const { return node_.get(); }

 private:
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;
};

/// Grad mode is per thread; graph construction never touches shared state.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

using Indices = std::shared_ptr<const std::vector<int64_t>>;

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& x, double factor);
template <typename T> Var<T> add_scalar(const Var<T>& x, double c);
/// x ⊙ mask with a constant mask.
template <typename T> Var<T> mul_const(const Var<T>& x, std::shared_ptr<const BasicTensor<T>> mask);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> reciprocal(const Var<T>& x);
template <typename T> Var<T> rsqrt(const Var<T>& x);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);

/// op(a) · op(b) for 2-D operands; op transposes when the flag is set.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_a = false, bool transpose_b = false);

/// x [B,C,H,W] → columns [C·k·k, B·OH·OW].
template <typename T> Var<T> im2col(const Var<T>& x, int64_t kernel);
template <typename T> Var<T> col2im(const Var<T>& cols, const Shape& image_shape, int64_t kernel);

/// Views x as [d0,d1,d2] and returns [d1,d0,d2].
template <typename T> Var<T> swap01(const Var<T>& x, int64_t d0, int64_t d1, int64_t d2);

/// out[i] = x[idx[i]].
template <typename T> Var<T> gather(const Var<T>& x, Indices idx, Shape out_shape);
/// Adjoint of gather: out[idx[i]] += g[i].
template <typename T> Var<T> scatter_add(const Var<T>& g, Indices idx, Shape out_shape);

/// Views x as [outer, mid, inner] and sums over outer and inner, giving [mid].
template <typename T> Var<T> sum_mid(const Var<T>& x, int64_t outer, int64_t mid, int64_t inner);
/// Adjoint of sum_mid: broadcasts c [mid] to out_shape viewed as [outer, mid, inner].
template <typename T> Var<T> expand_mid(const Var<T>& c, int64_t outer, int64_t mid, int64_t inner, Shape out_shape);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> dot(const Var<T>& a, const Var<T>& b);

/// Gradients of a scalar root with respect to wrt. Unreached inputs get zeros.
/// With create_graph the returned gradients are differentiable graph nodes.
template <typename T>
std::vector<Var<T>> backward(const Var<T>& root, const std::vector<Var<T>>& wrt, bool create_graph = false);

}  // namespace hesscope::ad

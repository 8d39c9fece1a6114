#include "hesscope/autodiff.hpp"

#include <algorithm>
#include <optional>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "hesscope/kernels.hpp"

namespace hesscope {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace hesscope

namespace hesscope::ad {

namespace {

thread_local bool t_grad_enabled = true;

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionMismatch(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T, typename F>
BasicTensor<T> map_unary(const BasicTensor<T>& x, F f) {
  BasicTensor<T> out(x.shape());
  const T* in = x.ptr();
  T* o = out.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) o[i] = f(in[i]);
  return out;
}

template <typename T, typename F>
BasicTensor<T> map_binary(const BasicTensor<T>& a, const BasicTensor<T>& b, F f) {
  BasicTensor<T> out(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* o = out.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) o[i] = f(pa[i], pb[i]);
  return out;
}

template <typename T>
Var<T> zeros_like(const Var<T>& x) {
  return Var<T>::constant(BasicTensor<T>(x.shape()));
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Var<T> Var<T>::constant(BasicTensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::leaf(BasicTensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::make(BasicTensor<T> value, std::vector<Var> inputs, BackwardFn<T> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (t_grad_enabled &&
      std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); })) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  return Var<T>::make(map_binary(a.value(), b.value(), [](T x, T y) { return x + y; }), {a, b},
                      [](const Var<T>& g) { return std::vector<Var<T>>{g, g}; });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  return Var<T>::make(map_binary(a.value(), b.value(), [](T x, T y) { return x - y; }), {a, b},
                      [](const Var<T>& g) { return std::vector<Var<T>>{g, scale(g, -1.0)}; });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  return Var<T>::make(map_binary(a.value(), b.value(), [](T x, T y) { return x * y; }), {a, b},
                      [a, b](const Var<T>& g) {
                        return std::vector<Var<T>>{a.requires_grad() ? mul(g, b) : Var<T>{},
                                                   b.requires_grad() ? mul(g, a) : Var<T>{}};
                      });
}

template <typename T>
Var<T> scale(const Var<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  return Var<T>::make(map_unary(x.value(), [f](T v) { return v * f; }), {x},
                      [factor](const Var<T>& g) { return std::vector<Var<T>>{scale(g, factor)}; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, double c) {
  const T s = static_cast<T>(c);
  return Var<T>::make(map_unary(x.value(), [s](T v) { return v + s; }), {x},
                      [](const Var<T>& g) { return std::vector<Var<T>>{g}; });
}

template <typename T>
Var<T> mul_const(const Var<T>& x, std::shared_ptr<const BasicTensor<T>> mask) {
  if (mask->shape() != x.shape()) throw DimensionMismatch("mul_const: mask shape " + shape_str(mask->shape()));
  return Var<T>::make(map_binary(x.value(), *mask, [](T v, T m) { return v * m; }), {x},
                      [mask](const Var<T>& g) { return std::vector<Var<T>>{mul_const(g, mask)}; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  auto mask = std::make_shared<BasicTensor<T>>(map_unary(x.value(), [](T v) { return v > T{0} ? T{1} : T{0}; }));
  return mul_const(x, std::shared_ptr<const BasicTensor<T>>(std::move(mask)));
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return Var<T>::make(map_unary(x.value(), [](T v) { return std::exp(v); }), {x},
                      [x](const Var<T>& g) { return std::vector<Var<T>>{mul(g, exp(x))}; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return Var<T>::make(map_unary(x.value(), [](T v) { return std::log(v); }), {x},
                      [x](const Var<T>& g) { return std::vector<Var<T>>{mul(g, reciprocal(x))}; });
}

template <typename T>
Var<T> reciprocal(const Var<T>& x) {
  return Var<T>::make(map_unary(x.value(), [](T v) { return T{1} / v; }), {x}, [x](const Var<T>& g) {
    const Var<T> r = reciprocal(x);
    return std::vector<Var<T>>{scale(mul(g, mul(r, r)), -1.0)};
  });
}

template <typename T>
Var<T> rsqrt(const Var<T>& x) {
  return Var<T>::make(map_unary(x.value(), [](T v) { return T{1} / std::sqrt(v); }), {x}, [x](const Var<T>& g) {
    const Var<T> r = rsqrt(x);
    return std::vector<Var<T>>{scale(mul(g, mul(r, mul(r, r))), -0.5)};
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Shape original = x.shape();
  return Var<T>::make(x.value().reshaped(std::move(shape)), {x},
                      [original](const Var<T>& g) { return std::vector<Var<T>>{reshape(g, original)}; });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_a, bool transpose_b) {
  if (a.value().rank() != 2 || b.value().rank() != 2) throw DimensionMismatch("matmul: operands must be 2-D");
  const int64_t m = transpose_a ? a.shape()[1] : a.shape()[0];
  const int64_t k = transpose_a ? a.shape()[0] : a.shape()[1];
  const int64_t kb = transpose_b ? b.shape()[1] : b.shape()[0];
  const int64_t n = transpose_b ? b.shape()[0] : b.shape()[1];
  if (k != kb) {
    throw DimensionMismatch("matmul: inner dims " + shape_str(a.shape()) + (transpose_a ? "ᵀ" : "") + " · " +
                            shape_str(b.shape()) + (transpose_b ? "ᵀ" : ""));
  }
  std::vector<T> at, bt;
  const T* pa = a.value().ptr();
  const T* pb = b.value().ptr();
  if (transpose_a) {
    at.resize(static_cast<size_t>(m * k));
    kernels::transpose(k, m, pa, at.data());
    pa = at.data();
  }
  if (transpose_b) {
    bt.resize(static_cast<size_t>(k * n));
    kernels::transpose(n, k, pb, bt.data());
    pb = bt.data();
  }
  BasicTensor<T> out({m, n});
  kernels::gemm(m, n, k, pa, pb, out.ptr());
  return Var<T>::make(std::move(out), {a, b}, [a, b, transpose_a, transpose_b](const Var<T>& g) {
    Var<T> ga, gb;
    if (a.requires_grad()) {
      ga = transpose_a ? matmul(b, g, transpose_b, true) : matmul(g, b, false, !transpose_b);
    }
    if (b.requires_grad()) {
      gb = transpose_b ? matmul(g, a, true, transpose_a) : matmul(a, g, !transpose_a, false);
    }
    return std::vector<Var<T>>{ga, gb};
  });
}

namespace {
kernels::ConvGeometry geometry(const Shape& image_shape, int64_t kernel) {
  if (image_shape.size() != 4) throw DimensionMismatch("convolution input must be [B,C,H,W], got " + shape_str(image_shape));
  kernels::ConvGeometry g{image_shape[0], image_shape[1], image_shape[2], image_shape[3], kernel};
  if (g.out_height() < 1 || g.out_width() < 1) {
    throw DimensionMismatch("kernel " + std::to_string(kernel) + " larger than image " + shape_str(image_shape));
  }
  return g;
}
}  // namespace

template <typename T>
Var<T> im2col(const Var<T>& x, int64_t kernel) {
  const auto g = geometry(x.shape(), kernel);
  BasicTensor<T> cols({g.patch(), g.positions()});
  kernels::im2col(g, x.value().ptr(), cols.ptr());
  Shape image_shape = x.shape();
  return Var<T>::make(std::move(cols), {x}, [image_shape, kernel](const Var<T>& gr) {
    return std::vector<Var<T>>{col2im(gr, image_shape, kernel)};
  });
}

template <typename T>
Var<T> col2im(const Var<T>& cols, const Shape& image_shape, int64_t kernel) {
  const auto g = geometry(image_shape, kernel);
  if (cols.shape() != Shape{g.patch(), g.positions()}) throw DimensionMismatch("col2im: column shape " + shape_str(cols.shape()));
  BasicTensor<T> image(image_shape);
  kernels::col2im(g, cols.value().ptr(), image.ptr());
  return Var<T>::make(std::move(image), {cols},
                      [kernel](const Var<T>& gr) { return std::vector<Var<T>>{im2col(gr, kernel)}; });
}

template <typename T>
Var<T> swap01(const Var<T>& x, int64_t d0, int64_t d1, int64_t d2) {
  if (d0 * d1 * d2 != x.numel()) throw DimensionMismatch("swap01: view does not match " + shape_str(x.shape()));
  BasicTensor<T> out({d1, d0, d2});
  const T* in = x.value().ptr();
  T* o = out.ptr();
  for (int64_t i = 0; i < d0; ++i) {
    for (int64_t j = 0; j < d1; ++j) std::copy_n(in + (i * d1 + j) * d2, d2, o + (j * d0 + i) * d2);
  }
  Shape original = x.shape();
  return Var<T>::make(std::move(out), {x}, [original, d0, d1, d2](const Var<T>& g) {
    return std::vector<Var<T>>{reshape(swap01(g, d1, d0, d2), original)};
  });
}

template <typename T>
Var<T> gather(const Var<T>& x, Indices idx, Shape out_shape) {
  if (static_cast<int64_t>(idx->size()) != shape_numel(out_shape)) throw DimensionMismatch("gather: index count");
  BasicTensor<T> out(out_shape);
  const T* in = x.value().ptr();
  for (size_t i = 0; i < idx->size(); ++i) out[static_cast<int64_t>(i)] = in[(*idx)[i]];
  Shape in_shape = x.shape();
  return Var<T>::make(std::move(out), {x}, [idx, in_shape](const Var<T>& g) {
    return std::vector<Var<T>>{scatter_add(g, idx, in_shape)};
  });
}

template <typename T>
Var<T> scatter_add(const Var<T>& g, Indices idx, Shape out_shape) {
  if (static_cast<int64_t>(idx->size()) != g.numel()) throw DimensionMismatch("scatter_add: index count");
  BasicTensor<T> out(out_shape);
  const T* in = g.value().ptr();
  for (size_t i = 0; i < idx->size(); ++i) out[(*idx)[i]] += in[i];
  Shape g_shape = g.shape();
  return Var<T>::make(std::move(out), {g}, [idx, g_shape](const Var<T>& gr) {
    return std::vector<Var<T>>{gather(gr, idx, g_shape)};
  });
}

template <typename T>
Var<T> sum_mid(const Var<T>& x, int64_t outer, int64_t mid, int64_t inner) {
  if (outer * mid * inner != x.numel()) throw DimensionMismatch("sum_mid: view does not match " + shape_str(x.shape()));
  std::vector<double> acc(static_cast<size_t>(mid), 0.0);
  const T* in = x.value().ptr();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t m = 0; m < mid; ++m) {
      const T* row = in + (o * mid + m) * inner;
      double s = 0.0;
      for (int64_t i = 0; i < inner; ++i) s += static_cast<double>(row[i]);
      acc[static_cast<size_t>(m)] += s;
    }
  }
  BasicTensor<T> out({mid}, std::vector<T>(acc.begin(), acc.end()));
  Shape original = x.shape();
  return Var<T>::make(std::move(out), {x}, [outer, mid, inner, original](const Var<T>& g) {
    return std::vector<Var<T>>{expand_mid(g, outer, mid, inner, original)};
  });
}

template <typename T>
Var<T> expand_mid(const Var<T>& c, int64_t outer, int64_t mid, int64_t inner, Shape out_shape) {
  if (c.numel() != mid || shape_numel(out_shape) != outer * mid * inner) throw DimensionMismatch("expand_mid: bad view");
  BasicTensor<T> out(std::move(out_shape));
  const T* in = c.value().ptr();
  T* o = out.ptr();
  for (int64_t a = 0; a < outer; ++a) {
    for (int64_t m = 0; m < mid; ++m) std::fill_n(o + (a * mid + m) * inner, inner, in[m]);
  }
  Shape c_shape = c.shape();
  return Var<T>::make(std::move(out), {c}, [outer, mid, inner, c_shape](const Var<T>& g) {
    return std::vector<Var<T>>{reshape(sum_mid(g, outer, mid, inner), c_shape)};
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  return sum_mid(x, 1, 1, x.numel());
}

template <typename T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
  return sum(mul(a, b));
}

template <typename T>
std::vector<Var<T>> backward(const Var<T>& root, const std::vector<Var<T>>& wrt, bool create_graph) {
  std::vector<Var<T>> result;
  result.reserve(wrt.size());
  if (!root.requires_grad()) {
    for (const auto& w : wrt) result.push_back(zeros_like(w));
    return result;
  }

  // Post-order over the differentiable subgraph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].node();
      if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_set<Node<T>*> keep;
  for (const auto& w : wrt) keep.insert(w.node());

  std::unordered_map<Node<T>*, Var<T>> grads;
  grads[root.node()] = Var<T>::constant(BasicTensor<T>(root.shape(), T{1}));

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    auto found = grads.find(node);
    if (found == grads.end() || !node->backward) continue;
    const Var<T> g = found->second;
    if (!keep.contains(node)) grads.erase(found);
    std::vector<Var<T>> input_grads = node->backward(g);
    for (size_t i = 0; i < node->inputs.size(); ++i) {
      const Var<T>& input = node->inputs[i];
      if (!input.requires_grad() || !input_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(input.node(), input_grads[i]);
      if (!inserted) slot->second = add(slot->second, input_grads[i]);
    }
  }

  for (const auto& w : wrt) {
    auto found = grads.find(w.node());
    result.push_back(found == grads.end() ? zeros_like(w) : found->second);
  }
  return result;
}

#define HESSCOPE_INSTANTIATE(T)                                                                   \
  template class Var<T>;                                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale(const Var<T>&, double);                                                   \
  template Var<T> add_scalar(const Var<T>&, double);                                              \
  template Var<T> mul_const(const Var<T>&, std::shared_ptr<const BasicTensor<T>>);                \
  template Var<T> relu(const Var<T>&);                                                            \
  template Var<T> exp(const Var<T>&);                                                             \
  template Var<T> log(const Var<T>&);                                                             \
  template Var<T> reciprocal(const Var<T>&);                                                      \
  template Var<T> rsqrt(const Var<T>&);                                                           \
  template Var<T> reshape(const Var<T>&, Shape);                                                  \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                               \
  template Var<T> im2col(const Var<T>&, int64_t);                                                 \
  template Var<T> col2im(const Var<T>&, const Shape&, int64_t);                                   \
  template Var<T> swap01(const Var<T>&, int64_t, int64_t, int64_t);                               \
  template Var<T> gather(const Var<T>&, Indices, Shape);                                          \
  template Var<T> scatter_add(const Var<T>&, Indices, Shape);                                     \
  template Var<T> sum_mid(const Var<T>&, int64_t, int64_t, int64_t);                              \
  template Var<T> expand_mid(const Var<T>&, int64_t, int64_t, int64_t, Shape);                    \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> dot(const Var<T>&, const Var<T>&);                                              \
  template std::vector<Var<T>> backward(const Var<T>&, const std::vector<Var<T>>&, bool);
HESSCOPE_INSTANTIATE(float)
HESSCOPE_INSTANTIATE(double)
#undef HESSCOPE_INSTANTIATE

}  // namespace hesscope::ad

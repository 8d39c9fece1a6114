#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hesscope/autodiff.hpp"
#include "hesscope/tensor.hpp"

namespace hesscope {

enum class ParamKind { kernel, bias, bn_gamma, bn_beta, bn_running_mean, bn_running_var };

std::string to_string(ParamKind kind);
ParamKind param_kind_from_string(const std::string& name);

/// Running statistics are bookkeeping, not weights.
constexpr bool is_differentiable(ParamKind kind) {
  return kind != ParamKind::bn_running_mean && kind != ParamKind::bn_running_var;
}
constexpr bool is_bn_affine(ParamKind kind) { return kind == ParamKind::bn_gamma || kind == ParamKind::bn_beta; }

/// Canonical flat space of the differentiable parameters (directions, Lanczos vectors, gradients).
using FlatVector = Eigen::VectorXd;

template <typename T>
struct BasicParamEntry {
  std::string name;
  BasicTensor<T> tensor;
  ParamKind kind;
};

/// Named, ordered parameter tensors. The flat view concatenates differentiable
/// entries in declaration order.
template <typename T>
class BasicParamVector {
 public:
  using Entry = BasicParamEntry<T>;

  void add(std::string name, BasicTensor<T> tensor, ParamKind kind);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }

  const Entry& at(const std::string& name) const;
  Entry& at(const std::string& name);
  std::optional<size_t> index_of(const std::string& name) const;

  /// Count of differentiable scalars.
  int64_t total_len() const;
  /// Start of each entry in the flat view; running-stat entries map to nullopt.
  std::vector<std::optional<int64_t>> flat_offsets() const;

  FlatVector flatten() const;
  /// Copy of this vector with differentiable entries replaced from flat.
  BasicParamVector unflatten(const FlatVector& flat) const;
  /// 1.0 at coordinates whose entry kind satisfies pred, 0.0 elsewhere.
  FlatVector coordinate_mask(const std::function<bool(ParamKind)>& pred) const;

  template <typename U>
  BasicParamVector<U> cast() const {
    BasicParamVector<U> out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<U>(), e.kind);
    return out;
  }

 private:
  std::vector<Entry> entries_;
};

using ParamVector = BasicParamVector<float>;
using ParamEntry = BasicParamEntry<float>;

FlatVector flatten(const ParamVector& params);
ParamVector unflatten(const FlatVector& flat, const ParamVector& like);

/// Same names, kinds, shapes and bit patterns.
template <typename T>
bool bitwise_equal(const BasicParamVector<T>& a, const BasicParamVector<T>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || x.kind != y.kind || !bitwise_equal(x.tensor, y.tensor)) return false;
  }
  return true;
}

/// Parameters bound into a graph: differentiable entries as leaves (when requested),
/// running statistics always as constants.
template <typename T>
class ParamGraph {
 public:
  ParamGraph(const BasicParamVector<T>& params, bool differentiable);

  const ad::Var<T>& operator[](const std::string& name) const;
  const BasicParamVector<T>& params() const { return *params_; }
  /// Leaves of the differentiable entries, in flat order.
  const std::vector<ad::Var<T>>& leaves() const { return leaves_; }

 private:
  const BasicParamVector<T>* params_;
  std::vector<ad::Var<T>> vars_;
  std::vector<ad::Var<T>> leaves_;
};

/// Scalar function of the parameters (the batch and mode are captured by the closure).
template <typename T>
using LossFn = std::function<ad::Var<T>(const ParamGraph<T>&)>;

template <typename T>
double loss_value(const LossFn<T>& loss_fn, const BasicParamVector<T>& params);

/// dL/dw in flat order. Throws NonFiniteLoss when L is not finite.
template <typename T>
FlatVector grad(const LossFn<T>& loss_fn, const BasicParamVector<T>& params);

/// Loss and gradient from one forward/backward pass.
template <typename T>
std::pair<double, FlatVector> value_and_grad(const LossFn<T>& loss_fn, const BasicParamVector<T>& params);

/// H·v by differentiating ⟨∇L, v⟩ a second time.
template <typename T>
FlatVector hvp(const LossFn<T>& loss_fn, const BasicParamVector<T>& params, const FlatVector& v);

}  // namespace hesscope

#include "hesscope/params.hpp"

#include <cmath>

namespace hesscope {

std::string to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::kernel: return "kernel";
    case ParamKind::bias: return "bias";
    case ParamKind::bn_gamma: return "bn_gamma";
    case ParamKind::bn_beta: return "bn_beta";
    case ParamKind::bn_running_mean: return "bn_running_mean";
    case ParamKind::bn_running_var: return "bn_running_var";
  }
  return "unknown";
}

ParamKind param_kind_from_string(const std::string& name) {
  for (ParamKind k : {ParamKind::kernel, ParamKind::bias, ParamKind::bn_gamma, ParamKind::bn_beta,
                      ParamKind::bn_running_mean, ParamKind::bn_running_var}) {
    if (to_string(k) == name) return k;
  }
  throw ManifestError("unknown parameter kind '" + name + "'");
}

template <typename T>
void BasicParamVector<T>::add(std::string name, BasicTensor<T> tensor, ParamKind kind) {
  if (index_of(name)) throw SpecError("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(tensor), kind});
}

template <typename T>
std::optional<size_t> BasicParamVector<T>::index_of(const std::string& name) const {
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

template <typename T>
const typename BasicParamVector<T>::Entry& BasicParamVector<T>::at(const std::string& name) const {
  auto i = index_of(name);
  if (!i) throw DimensionMismatch("no parameter named '" + name + "'");
  return entries_[*i];
}

template <typename T>
typename BasicParamVector<T>::Entry& BasicParamVector<T>::at(const std::string& name) {
  auto i = index_of(name);
  if (!i) throw DimensionMismatch("no parameter named '" + name + "'");
  return entries_[*i];
}

template <typename T>
int64_t BasicParamVector<T>::total_len() const {
  int64_t n = 0;
  for (const auto& e : entries_) {
    if (is_differentiable(e.kind)) n += e.tensor.numel();
  }
  return n;
}

template <typename T>
std::vector<std::optional<int64_t>> BasicParamVector<T>::flat_offsets() const {
  std::vector<std::optional<int64_t>> offsets;
  int64_t at = 0;
  for (const auto& e : entries_) {
    if (is_differentiable(e.kind)) {
      offsets.emplace_back(at);
      at += e.tensor.numel();
    } else {
      offsets.emplace_back(std::nullopt);
    }
  }
  return offsets;
}

template <typename T>
FlatVector BasicParamVector<T>::flatten() const {
  FlatVector flat(total_len());
  int64_t at = 0;
  for (const auto& e : entries_) {
    if (!is_differentiable(e.kind)) continue;
    for (T x : e.tensor.data()) flat[at++] = static_cast<double>(x);
  }
  return flat;
}

template <typename T>
BasicParamVector<T> BasicParamVector<T>::unflatten(const FlatVector& flat) const {
  if (flat.size() != total_len()) {
    throw DimensionMismatch("flat vector of length " + std::to_string(flat.size()) + " vs parameter length " +
                            std::to_string(total_len()));
  }
  BasicParamVector out = *this;
  int64_t at = 0;
  for (auto& e : out.entries_) {
    if (!is_differentiable(e.kind)) continue;
    for (T& x : e.tensor.data()) x = static_cast<T>(flat[at++]);
  }
  return out;
}

template <typename T>
FlatVector BasicParamVector<T>::coordinate_mask(const std::function<bool(ParamKind)>& pred) const {
  FlatVector mask(total_len());
  int64_t at = 0;
  for (const auto& e : entries_) {
    if (!is_differentiable(e.kind)) continue;
    mask.segment(at, e.tensor.numel()).setConstant(pred(e.kind) ? 1.0 : 0.0);
    at += e.tensor.numel();
  }
  return mask;
}

FlatVector flatten(const ParamVector& params) { return params.flatten(); }
ParamVector unflatten(const FlatVector& flat, const ParamVector& like) { return like.unflatten(flat); }

template <typename T>
ParamGraph<T>::ParamGraph(const BasicParamVector<T>& params, bool differentiable) : params_(&params) {
  for (const auto& e : params.entries()) {
    if (differentiable && is_differentiable(e.kind)) {
      vars_.push_back(ad::Var<T>::leaf(e.tensor));
      leaves_.push_back(vars_.back());
    } else {
      vars_.push_back(ad::Var<T>::constant(e.tensor));
    }
  }
}

template <typename T>
const ad::Var<T>& ParamGraph<T>::operator[](const std::string& name) const {
  auto i = params_->index_of(name);
  if (!i) throw DimensionMismatch("no parameter named '" + name + "'");
  return vars_[*i];
}

namespace {

template <typename T>
FlatVector concat(const std::vector<ad::Var<T>>& parts, int64_t total) {
  FlatVector flat(total);
  int64_t at = 0;
  for (const auto& p : parts) {
    for (T x : p.value().data()) flat[at++] = static_cast<double>(x);
  }
  return flat;
}

template <typename T>
double checked_scalar(const ad::Var<T>& loss) {
  if (loss.numel() != 1) throw DimensionMismatch("loss must be scalar, got " + shape_str(loss.shape()));
  const double value = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(value)) throw NonFiniteLoss(value, "");
  return value;
}

}  // namespace

template <typename T>
double loss_value(const LossFn<T>& loss_fn, const BasicParamVector<T>& params) {
  ad::NoGradGuard no_grad;
  ParamGraph<T> graph(params, false);
  const ad::Var<T> loss = loss_fn(graph);
  if (loss.numel() != 1) throw DimensionMismatch("loss must be scalar");
  return static_cast<double>(loss.value()[0]);
}

template <typename T>
std::pair<double, FlatVector> value_and_grad(const LossFn<T>& loss_fn, const BasicParamVector<T>& params) {
  ParamGraph<T> graph(params, true);
  const ad::Var<T> loss = loss_fn(graph);
  const double value = checked_scalar(loss);
  const auto grads = ad::backward(loss, graph.leaves(), false);
  return {value, concat(grads, params.total_len())};
}

template <typename T>
FlatVector grad(const LossFn<T>& loss_fn, const BasicParamVector<T>& params) {
  return value_and_grad(loss_fn, params).second;
}

template <typename T>
FlatVector hvp(const LossFn<T>& loss_fn, const BasicParamVector<T>& params, const FlatVector& v) {
  if (v.size() != params.total_len()) {
    throw DimensionMismatch("hvp: vector of length " + std::to_string(v.size()) + " vs parameter length " +
                            std::to_string(params.total_len()));
  }
  ParamGraph<T> graph(params, true);
  const ad::Var<T> loss = loss_fn(graph);
  checked_scalar(loss);
  const auto grads = ad::backward(loss, graph.leaves(), true);

  ad::Var<T> inner;
  int64_t at = 0;
  for (const auto& g : grads) {
    BasicTensor<T> piece(g.shape());
    for (T& x : piece.data()) x = static_cast<T>(v[at++]);
    ad::Var<T> term = ad::dot(g, ad::Var<T>::constant(std::move(piece)));
    inner = inner.defined() ? ad::add(inner, term) : term;
  }
  if (!inner.defined()) return FlatVector::Zero(0);
  return concat(ad::backward(inner, graph.leaves(), false), params.total_len());
}

template class BasicParamVector<float>;
template class BasicParamVector<double>;
template class ParamGraph<float>;
template class ParamGraph<double>;

#define HESSCOPE_INSTANTIATE(T)                                                                              \
  template double loss_value<T>(const LossFn<T>&, const BasicParamVector<T>&);                               \
  template FlatVector grad<T>(const LossFn<T>&, const BasicParamVector<T>&);                                 \
  template std::pair<double, FlatVector> value_and_grad<T>(const LossFn<T>&, const BasicParamVector<T>&); \
  template FlatVector hvp<T>(const LossFn<T>&, const BasicParamVector<T>&, const FlatVector&);
HESSCOPE_INSTANTIATE(float)
HESSCOPE_INSTANTIATE(double)
#undef HESSCOPE_INSTANTIATE

}  // namespace hesscope

#include "hesscope/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hesscope/random.hpp"

namespace hesscope {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::mlp: return "mlp";
    case Architecture::lenet_mini: return "lenet_mini";
    case Architecture::bn_cnn: return "bn_cnn";
  }
  return "unknown";
}

Architecture architecture_from_string(const std::string& name) {
  for (auto a : {Architecture::mlp, Architecture::lenet_mini, Architecture::bn_cnn}) {
    if (to_string(a) == name) return a;
  }
  throw SpecError("unknown architecture '" + name + "' (expected mlp, lenet_mini or bn_cnn)");
}

std::string to_string(Mode mode) { return mode == Mode::train ? "train" : "eval"; }

Mode mode_from_string(const std::string& name) {
  if (name == "train") return Mode::train;
  if (name == "eval") return Mode::eval;
  throw SpecError("unknown mode '" + name + "' (expected train or eval)");
}

ModelSpec ModelSpec::mlp(int64_t channels, int64_t height, int64_t width, int classes) {
  ModelSpec s;
  s.architecture = Architecture::mlp;
  s.channels = channels;
  s.height = height;
  s.width = width;
  s.class_count = classes;
  s.conv_channels = {};
  s.hidden = {128};
  return s;
}

ModelSpec ModelSpec::lenet_mini(int64_t channels, int64_t height, int64_t width, int classes) {
  ModelSpec s;
  s.architecture = Architecture::lenet_mini;
  s.channels = channels;
  s.height = height;
  s.width = width;
  s.class_count = classes;
  return s;
}

ModelSpec ModelSpec::bn_cnn(int64_t channels, int64_t height, int64_t width, int classes) {
  ModelSpec s = lenet_mini(channels, height, width, classes);
  s.architecture = Architecture::bn_cnn;
  return s;
}

namespace {

/// Feature count entering the fully connected stack.
int64_t feature_count(const ModelSpec& spec) {
  if (spec.architecture == Architecture::mlp) return spec.channels * spec.height * spec.width;
  int64_t h = spec.height, w = spec.width, c = spec.channels;
  for (int64_t out : spec.conv_channels) {
    h = (h - kConvKernel + 1) / 2;
    w = (w - kConvKernel + 1) / 2;
    c = out;
  }
  return c * h * w;
}

std::string layer(const char* prefix, size_t index, const char* suffix) {
  return std::string(prefix) + std::to_string(index + 1) + suffix;
}

}  // namespace

void ModelSpec::validate() const {
  if (class_count < 2) throw SpecError("class_count must be >= 2");
  if (channels < 1 || height < 1 || width < 1) throw SpecError("input shape must be positive");
  if (bn_momentum < 0 || bn_momentum > 1) throw SpecError("bn_momentum must lie in [0, 1]");
  for (int64_t hdim : hidden) {
    if (hdim < 1) throw SpecError("hidden widths must be positive");
  }
  if (architecture == Architecture::mlp) {
    if (!conv_channels.empty()) throw SpecError("mlp takes no conv_channels");
    return;
  }
  if (conv_channels.empty()) throw SpecError(to_string(architecture) + " needs at least one conv layer");
  int64_t h = height, w = width;
  for (int64_t out : conv_channels) {
    if (out < 1) throw SpecError("conv channel counts must be positive");
    h -= kConvKernel - 1;
    w -= kConvKernel - 1;
    if (h < 2 || w < 2) throw SpecError("input " + std::to_string(height) + "x" + std::to_string(width) + " too small for the conv stack");
    h /= 2;
    w /= 2;
  }
}

ParamVector build_model(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamVector params;
  auto uniform_tensor = [&](Shape shape, int64_t fan_in) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (float& x : t.data()) x = static_cast<float>(uniform(rng, -k, k));
    return t;
  };

  int64_t in_channels = spec.channels;
  for (size_t i = 0; i < spec.conv_channels.size(); ++i) {
    const int64_t out = spec.conv_channels[i];
    const int64_t fan_in = in_channels * kConvKernel * kConvKernel;
    params.add(layer("conv", i, ".weight"), uniform_tensor({out, in_channels, kConvKernel, kConvKernel}, fan_in),
               ParamKind::kernel);
    params.add(layer("conv", i, ".bias"), uniform_tensor({out}, fan_in), ParamKind::bias);
    if (spec.architecture == Architecture::bn_cnn) {
      params.add(layer("bn", i, ".weight"), Tensor({out}, 1.0f), ParamKind::bn_gamma);
      params.add(layer("bn", i, ".bias"), Tensor({out}, 0.0f), ParamKind::bn_beta);
      params.add(layer("bn", i, ".running_mean"), Tensor({out}, 0.0f), ParamKind::bn_running_mean);
      params.add(layer("bn", i, ".running_var"), Tensor({out}, 1.0f), ParamKind::bn_running_var);
    }
    in_channels = out;
  }

  std::vector<int64_t> widths = spec.hidden;
  widths.push_back(spec.class_count);
  int64_t fan_in = feature_count(spec);
  for (size_t i = 0; i < widths.size(); ++i) {
    params.add(layer("fc", i, ".weight"), uniform_tensor({widths[i], fan_in}, fan_in), ParamKind::kernel);
    params.add(layer("fc", i, ".bias"), uniform_tensor({widths[i]}, fan_in), ParamKind::bias);
    fan_in = widths[i];
  }
  return params;
}

namespace {

using ad::Var;

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const int64_t batch = x.shape()[0];
  const int64_t out = weight.shape()[0];
  const int64_t k = weight.shape()[2];
  const int64_t oh = x.shape()[2] - k + 1, ow = x.shape()[3] - k + 1;
  const int64_t positions = oh * ow;
  const Var<T> cols = ad::im2col(x, k);
  const Var<T> w2 = ad::reshape(weight, {out, weight.numel() / out});
  Var<T> y = ad::matmul(w2, cols);  // [O, B·L]
  y = ad::reshape(ad::swap01(y, out, batch, positions), {batch, out, oh, ow});
  return ad::add(y, ad::expand_mid(bias, batch, out, positions, y.shape()));
}

template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Var<T> y = ad::matmul(x, weight, false, true);
  return ad::add(y, ad::expand_mid(bias, y.shape()[0], y.shape()[1], 1, y.shape()));
}

template <typename T>
Var<T> maxpool2(const Var<T>& x) {
  const Shape& s = x.shape();
  const int64_t oh = s[2] / 2, ow = s[3] / 2;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(s[0] * s[1] * oh * ow));
  const T* v = x.value().ptr();
  for (int64_t p = 0; p < s[0] * s[1]; ++p) {
    const int64_t base = p * s[2] * s[3];
    for (int64_t r = 0; r < oh; ++r) {
      for (int64_t c = 0; c < ow; ++c) {
        int64_t best = base + 2 * r * s[3] + 2 * c;
        for (int64_t dr = 0; dr < 2; ++dr) {
          for (int64_t dc = 0; dc < 2; ++dc) {
            const int64_t at = base + (2 * r + dr) * s[3] + 2 * c + dc;
            if (v[at] > v[best]) best = at;
          }
        }
        idx->push_back(best);
      }
    }
  }
  return ad::gather(x, ad::Indices(std::move(idx)), {s[0], s[1], oh, ow});
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const ParamGraph<T>& params, size_t index, Mode mode, BatchNormTrace* trace) {
  const Shape& s = x.shape();
  const int64_t outer = s[0], mid = s[1], inner = s[2] * s[3];
  const int64_t n = outer * inner;
  const std::string prefix = "bn" + std::to_string(index + 1);
  auto expand = [&](const Var<T>& c) { return ad::expand_mid(c, outer, mid, inner, s); };

  Var<T> normalized;
  if (mode == Mode::train) {
    const Var<T> mean = ad::scale(ad::sum_mid(x, outer, mid, inner), 1.0 / static_cast<double>(n));
    const Var<T> centered = ad::sub(x, expand(mean));
    const Var<T> var = ad::scale(ad::sum_mid(ad::mul(centered, centered), outer, mid, inner), 1.0 / static_cast<double>(n));
    normalized = ad::mul(centered, expand(ad::rsqrt(ad::add_scalar(var, kBatchNormEps))));
    if (trace) {
      BatchNormTrace::Layer layer{prefix, {}, {}, {}};
      const double correction = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
      for (int64_t c = 0; c < mid; ++c) {
        layer.mean.push_back(static_cast<double>(mean.value()[c]));
        layer.var_unbiased.push_back(static_cast<double>(var.value()[c]) * correction);
      }
      if (trace->capture_normalized) layer.normalized = normalized.value().template cast<float>();
      trace->layers.push_back(std::move(layer));
    }
  } else {
    const Var<T>& running_mean = params[prefix + ".running_mean"];
    const Var<T>& running_var = params[prefix + ".running_var"];
    normalized = ad::mul(ad::sub(x, expand(running_mean)), expand(ad::rsqrt(ad::add_scalar(running_var, kBatchNormEps))));
  }
  return ad::add(ad::mul(normalized, expand(params[prefix + ".weight"])), expand(params[prefix + ".bias"]));
}

}  // namespace

template <typename T>
Var<T> forward(const ModelSpec& spec, const ParamGraph<T>& params, const Var<T>& images, Mode mode,
               BatchNormTrace* trace) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != spec.channels || s[2] != spec.height || s[3] != spec.width) {
    throw DimensionMismatch("batch of shape " + shape_str(s) + " does not match model input [B," +
                            std::to_string(spec.channels) + "," + std::to_string(spec.height) + "," +
                            std::to_string(spec.width) + "]");
  }
  const int64_t batch = s[0];
  Var<T> x = images;
  for (size_t i = 0; i < spec.conv_channels.size(); ++i) {
    x = conv2d(x, params[layer("conv", i, ".weight")], params[layer("conv", i, ".bias")]);
    if (spec.architecture == Architecture::bn_cnn) x = batch_norm(x, params, i, mode, trace);
    x = maxpool2(ad::relu(x));
  }
  x = ad::reshape(x, {batch, x.numel() / batch});
  const size_t layers = spec.hidden.size() + 1;
  for (size_t i = 0; i < layers; ++i) {
    x = dense(x, params[layer("fc", i, ".weight")], params[layer("fc", i, ".bias")]);
    if (i + 1 < layers) x = ad::relu(x);
  }
  return x;
}

Tensor forward(const ModelSpec& spec, const ParamVector& params, const Batch& batch, Mode mode) {
  ad::NoGradGuard no_grad;
  ParamGraph<float> graph(params, false);
  return forward(spec, graph, ad::Var<float>::constant(batch.images), mode).value();
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  if (logits.value().rank() != 2) throw DimensionMismatch("logits must be [B,K], got " + shape_str(logits.shape()));
  const int64_t b = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<int64_t>(labels.size()) != b) throw DimensionMismatch("label count does not match batch size");

  BasicTensor<T> row_max({b});
  BasicTensor<T> row_max_expanded({b, k});
  auto picked = std::make_shared<std::vector<int64_t>>();
  picked->reserve(static_cast<size_t>(b));
  const T* v = logits.value().ptr();
  for (int64_t r = 0; r < b; ++r) {
    T m = v[r * k];
    for (int64_t c = 1; c < k; ++c) m = std::max(m, v[r * k + c]);
    row_max[r] = m;
    std::fill_n(row_max_expanded.ptr() + r * k, k, m);
    const int label = labels[static_cast<size_t>(r)];
    if (label < 0 || label >= k) throw DimensionMismatch("label " + std::to_string(label) + " outside [0, K)");
    picked->push_back(r * k + label);
  }
  const Var<T> shifted = ad::sub(logits, Var<T>::constant(std::move(row_max_expanded)));
  const Var<T> lse = ad::add(ad::log(ad::sum_mid(ad::exp(shifted), 1, b, k)), Var<T>::constant(std::move(row_max)));
  const Var<T> target = ad::gather(logits, ad::Indices(std::move(picked)), {b});
  return ad::scale(ad::sum(ad::sub(lse, target)), 1.0 / static_cast<double>(b));
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  ad::NoGradGuard no_grad;
  return static_cast<double>(cross_entropy(ad::Var<float>::constant(logits), labels).value()[0]);
}

std::vector<int> predict(const Tensor& logits) {
  const int64_t b = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(b));
  for (int64_t r = 0; r < b; ++r) {
    int best = 0;
    for (int64_t c = 1; c < k; ++c) {
      if (logits[r * k + c] > logits[r * k + best]) best = static_cast<int>(c);
    }
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const auto predicted = predict(logits);
  if (predicted.empty()) return 0.0;
  int64_t hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double accuracy(const ModelSpec& spec, const ParamVector& params, const Batch& batch, Mode mode) {
  return accuracy(forward(spec, params, batch, mode), batch.labels);
}

double accuracy(const ModelSpec& spec, const ParamVector& params, const Dataset& ds, Mode mode, int64_t chunk_size) {
  if (ds.size() == 0) throw EmptyDataset("accuracy on an empty dataset");
  int64_t hits = 0;
  for (int64_t start = 0; start < ds.size(); start += chunk_size) {
    const int64_t count = std::min(chunk_size, ds.size() - start);
    std::vector<int64_t> idx(static_cast<size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    const Batch chunk = ds.gather(idx);
    const auto predicted = predict(forward(spec, params, chunk, mode));
    for (size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == chunk.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

template <typename T>
LossFn<T> make_loss(const ModelSpec& spec, const Batch& batch, Mode mode) {
  auto images = std::make_shared<const BasicTensor<T>>(batch.images.template cast<T>());
  auto labels = std::make_shared<const std::vector<int>>(batch.labels);
  return [spec, images, labels, mode](const ParamGraph<T>& params) {
    return cross_entropy(forward(spec, params, ad::Var<T>::constant(*images), mode), *labels);
  };
}

double loss(const ModelSpec& spec, const ParamVector& params, const Batch& batch, Mode mode) {
  return cross_entropy(forward(spec, params, batch, mode), batch.labels);
}

#define HESSCOPE_INSTANTIATE(T)                                                                                   \
  template Var<T> forward<T>(const ModelSpec&, const ParamGraph<T>&, const Var<T>&, Mode, BatchNormTrace*); \
  template Var<T> cross_entropy<T>(const Var<T>&, const std::vector<int>&);                                    \
  template LossFn<T> make_loss<T>(const ModelSpec&, const Batch&, Mode);
HESSCOPE_INSTANTIATE(float)
HESSCOPE_INSTANTIATE(double)
#undef HESSCOPE_INSTANTIATE

}  // namespace hesscope

#include "hesscope/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "hesscope/llac.hpp"
#include "hesscope/random.hpp"
#include "hesscope/serialize.hpp"

namespace hesscope {

using nlohmann::json;

std::string to_string(Optimizer opt) { return opt == Optimizer::adam ? "adam" : "sgd"; }

Optimizer optimizer_from_string(const std::string& name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "sgd") return Optimizer::sgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

AdamState AdamState::zeros(int64_t dim, double lr, double beta1, double beta2, double eps) {
  AdamState s;
  s.m = FlatVector::Zero(dim);
  s.v = FlatVector::Zero(dim);
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  s.lr = lr;
  return s;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
}

void adam_step(ParamVector& params, const FlatVector& grad, AdamState& state) {
  const int64_t n = params.total_len();
  if (grad.size() != n || state.m.size() != n || state.v.size() != n) {
    throw DimensionMismatch("adam_step: gradient " + std::to_string(grad.size()) + ", moments " +
                            std::to_string(state.m.size()) + " vs parameters " + std::to_string(n));
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  FlatVector w = params.flatten();
  for (int64_t i = 0; i < n; ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    w[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
  params = params.unflatten(w);
}

void sgd_step(ParamVector& params, const FlatVector& grad, double lr) {
  if (grad.size() != params.total_len()) throw DimensionMismatch("sgd_step: gradient length mismatch");
  params = params.unflatten(params.flatten() - lr * grad);
}

ParamVector initial_params(const ModelSpec& spec, uint64_t seed) { return build_model(spec, derive_seed(seed, {0})); }

namespace {

struct StepResult {
  double loss;
  int64_t hits;
};

/// One forward/backward pass on a batch; updates BN running statistics and takes the optimizer step.
StepResult train_step(const ModelSpec& spec, ParamVector& params, const Batch& batch, const TrainConfig& cfg,
                      AdamState* adam) {
  FlatVector g;
  BatchNormTrace trace;
  StepResult out{};
  {
    ParamGraph<float> graph(params, true);
    const ad::Var<float> logits = forward(spec, graph, ad::Var<float>::constant(batch.images), Mode::train, &trace);
    const ad::Var<float> loss = cross_entropy(logits, batch.labels);
    out.loss = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(out.loss)) throw NonFiniteLoss(out.loss, "");
    const auto predicted = predict(logits.value());
    for (size_t i = 0; i < predicted.size(); ++i) out.hits += predicted[i] == batch.labels[i];
    const auto grads = ad::backward(loss, graph.leaves());
    g.resize(params.total_len());
    int64_t at = 0;
    for (const auto& gv : grads) {
      for (float x : gv.value().data()) g[at++] = static_cast<double>(x);
    }
  }

  const double momentum = spec.bn_momentum;
  for (const auto& layer : trace.layers) {
    auto& mean = params.at(layer.name + ".running_mean").tensor;
    auto& var = params.at(layer.name + ".running_var").tensor;
    for (size_t c = 0; c < layer.mean.size(); ++c) {
      const auto i = static_cast<int64_t>(c);
      mean[i] = static_cast<float>((1.0 - momentum) * mean[i] + momentum * layer.mean[c]);
      var[i] = static_cast<float>((1.0 - momentum) * var[i] + momentum * layer.var_unbiased[c]);
    }
  }

  if (adam) {
    adam_step(params, g, *adam);
  } else {
    sgd_step(params, g, cfg.lr);
  }
  return out;
}

}  // namespace

std::filesystem::path checkpoint_filename(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04d.llac", epoch);
  return buf;
}

TrainResult train(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (dataset.size() == 0) throw EmptyDataset("training set '" + dataset.name + "' is empty");
  if (dataset.class_count > spec.class_count) {
    throw ClassCountMismatch("dataset has " + std::to_string(dataset.class_count) + " classes, model " +
                             std::to_string(spec.class_count));
  }

  TrainResult result;
  Checkpoint& ckpt = result.final;
  if (opts.resume) {
    ckpt = *opts.resume;
  } else {
    ckpt.spec = spec;
    ckpt.params = initial_params(spec, cfg.seed);
    ckpt.seed = cfg.seed;
    if (cfg.optimizer == Optimizer::adam) {
      ckpt.adam = AdamState::zeros(ckpt.params.total_len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    }
  }

  for (int epoch = ckpt.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = batch_indices(dataset.size(), cfg.batch_size, derive_seed(ckpt.seed, {1, uint64_t(epoch)}));
    double loss_sum = 0.0;
    int64_t hits = 0, seen = 0;
    for (size_t b = 0; b < order.size(); ++b) {
      const Batch batch = dataset.gather(order[b]);
      StepResult step;
      try {
        step = train_step(spec, ckpt.params, batch, cfg, ckpt.adam ? &*ckpt.adam : nullptr);
      } catch (const NonFiniteLoss& e) {
        throw NonFiniteLoss(e.value(), "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      loss_sum += step.loss;
      hits += step.hits;
      seen += batch.size();
    }
    const EpochRecord record{epoch, loss_sum / static_cast<double>(order.size()),
                             static_cast<double>(hits) / static_cast<double>(seen)};
    result.history.push_back(record);
    ckpt.epoch = epoch;
    ckpt.train_loss = record.loss;
    ckpt.train_accuracy = record.accuracy;
    if (opts.on_epoch) opts.on_epoch(record);

    if (!opts.checkpoint_dir.empty() && (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)) {
      const auto path = opts.checkpoint_dir / checkpoint_filename(epoch);
      save_checkpoint(ckpt, path);
      result.checkpoint_files.push_back(path);
    }
  }
  return result;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  LlacFile file;
  file.meta["model"] = to_json(ckpt.spec);
  file.meta["epoch"] = ckpt.epoch;
  file.meta["train_loss"] = ckpt.train_loss;
  file.meta["train_accuracy"] = ckpt.train_accuracy;
  file.meta["rng_state"] = {{"seed", ckpt.seed}, {"next_epoch", ckpt.epoch + 1}};
  if (ckpt.adam) {
    const AdamState& a = *ckpt.adam;
    file.meta["adam"] = {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"lr", a.lr}, {"step_count", a.step_count}};
  } else {
    file.meta["adam"] = nullptr;
  }
  for (const auto& e : ckpt.params.entries()) {
    file.tensors.push_back({e.name, to_string(e.kind), e.tensor.shape(), e.tensor.values()});
  }
  if (ckpt.adam) {
    const auto n = static_cast<int64_t>(ckpt.adam->m.size());
    const auto& m = ckpt.adam->m;
    const auto& v = ckpt.adam->v;
    file.tensors.push_back({"adam.m", "adam_m", {n}, std::vector<double>(m.data(), m.data() + n)});
    file.tensors.push_back({"adam.v", "adam_v", {n}, std::vector<double>(v.data(), v.data() + n)});
  }
  write_llac(file, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const LlacFile file = read_llac(path);
  const std::string where = path.string();
  Checkpoint ckpt;
  try {
    ckpt.spec = model_spec_from_json(file.meta.at("model"));
    ckpt.epoch = file.meta.at("epoch").get<int>();
    ckpt.train_loss = file.meta.at("train_loss").get<double>();
    ckpt.train_accuracy = file.meta.at("train_accuracy").get<double>();
    ckpt.seed = file.meta.at("rng_state").at("seed").get<uint64_t>();
    for (const auto& t : file.tensors) {
      if (t.kind == "adam_m" || t.kind == "adam_v") continue;
      if (t.data.index() != 0) throw ManifestError(where + ": parameter '" + t.name + "' is not f32");
      ckpt.params.add(t.name, Tensor(t.shape, std::get<0>(t.data)), param_kind_from_string(t.kind));
    }
    const json& adam = file.meta.at("adam");
    if (!adam.is_null()) {
      AdamState a;
      a.beta1 = adam.at("beta1").get<double>();
      a.beta2 = adam.at("beta2").get<double>();
      a.eps = adam.at("eps").get<double>();
      a.lr = adam.at("lr").get<double>();
      a.step_count = adam.at("step_count").get<int64_t>();
      auto moment = [&](const char* name) {
        const auto& t = file.at(name);
        if (t.data.index() != 1) throw ManifestError(where + ": '" + std::string(name) + "' is not f64");
        const auto& v = std::get<1>(t.data);
        return FlatVector(Eigen::Map<const FlatVector>(v.data(), static_cast<Eigen::Index>(v.size())));
      };
      a.m = moment("adam.m");
      a.v = moment("adam.v");
      if (a.m.size() != ckpt.params.total_len() || a.v.size() != ckpt.params.total_len()) {
        throw ManifestError(where + ": Adam moments do not match the parameter count");
      }
      ckpt.adam = std::move(a);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(where + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ManifestError(where + ": " + e.what());
  }
  return ckpt;
}

}  // namespace hesscope

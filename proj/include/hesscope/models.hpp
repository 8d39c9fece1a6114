#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hesscope/autodiff.hpp"
#include "hesscope/data.hpp"
#include "hesscope/params.hpp"

namespace hesscope {

enum class Architecture { mlp, lenet_mini, bn_cnn };
enum class Mode { train, eval };

std::string to_string(Architecture arch);
Architecture architecture_from_string(const std::string& name);
std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

struct ModelSpec {
  Architecture architecture = Architecture::lenet_mini;
  int64_t channels = 1, height = 32, width = 32;
  int class_count = 10;
  /// Output channels of the 5×5 convolutions (lenet_mini, bn_cnn).
  std::vector<int64_t> conv_channels{6, 16};
  /// Hidden widths of the fully connected stack.
  std::vector<int64_t> hidden{120, 84};
  double bn_momentum = 0.1;

  static ModelSpec mlp(int64_t channels = 1, int64_t height = 32, int64_t width = 32, int classes = 10);
  static ModelSpec lenet_mini(int64_t channels = 1, int64_t height = 32, int64_t width = 32, int classes = 10);
  static ModelSpec bn_cnn(int64_t channels = 1, int64_t height = 32, int64_t width = 32, int classes = 10);

  /// Throws SpecError when the layer dimensions do not chain.
  void validate() const;
};

inline constexpr int64_t kConvKernel = 5;
inline constexpr double kBatchNormEps = 1e-5;

/// Uniform(-1/√fan_in, 1/√fan_in) weights and biases; BN gamma 1, beta 0, running mean 0, running var 1.
ParamVector build_model(const ModelSpec& spec, uint64_t seed);

/// Per-channel batch statistics seen by each BN layer in train mode.
struct BatchNormTrace {
  struct Layer {
    std::string name;
    std::vector<double> mean;
    std::vector<double> var_unbiased;
    Tensor normalized;  // pre-affine output, captured only when requested
  };
  bool capture_normalized = false;
  std::vector<Layer> layers;
};

/// Logits [B, K]. Train mode normalizes BN channels with batch statistics, eval mode
/// with the stored running statistics. Never modifies parameters.
template <typename T>
ad::Var<T> forward(const ModelSpec& spec, const ParamGraph<T>& params, const ad::Var<T>& images, Mode mode,
                   BatchNormTrace* trace = nullptr);

Tensor forward(const ModelSpec& spec, const ParamVector& params, const Batch& batch, Mode mode);

/// Mean over the batch of -log softmax(logits)[label], via a max-shifted log-sum-exp.
template <typename T>
ad::Var<T> cross_entropy(const ad::Var<T>& logits, const std::vector<int>& labels);

double cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Argmax with ties going to the lowest class index.
std::vector<int> predict(const Tensor& logits);
double accuracy(const Tensor& logits, const std::vector<int>& labels);
double accuracy(const ModelSpec& spec, const ParamVector& params, const Batch& batch, Mode mode);
/// Evaluated in chunks of chunk_size samples.
double accuracy(const ModelSpec& spec, const ParamVector& params, const Dataset& ds, Mode mode, int64_t chunk_size = 500);

/// Cross-entropy of the model on a fixed batch, as a function of the parameters.
template <typename T>
LossFn<T> make_loss(const ModelSpec& spec, const Batch& batch, Mode mode);

double loss(const ModelSpec& spec, const ParamVector& params, const Batch& batch, Mode mode);

/// A model specification together with its parameters.
struct Model {
  ModelSpec spec;
  ParamVector params;
};

}  // namespace hesscope

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "hesscope/tensor.hpp"

namespace hesscope {

enum class Split { train, test };

struct Batch {
  Tensor images;            // [B, C, H, W], values in [0, 1]
  std::vector<int> labels;  // length B

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

struct Dataset {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;
  std::string name;
  Split split = Split::train;
  int class_count = 0;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  int64_t sample_numel() const { return size() ? images.numel() / size() : 0; }
  /// Samples [offset, offset + count) as a new dataset.
  Dataset slice(int64_t offset, int64_t count) const;
  /// The samples at the given indices, in order.
  Batch gather(const std::vector<int64_t>& indices) const;
};

/// Parses a big-endian IDX image/label pair; pixel bytes are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes the LLAD container: "LLAD", u32 version, u32 N, C, H, W, K, f32 pixels, u16 labels (little-endian).
void write_raw(const Dataset& ds, const std::filesystem::path& path);
Dataset load_raw(const std::filesystem::path& path);

/// Zero-pads each image symmetrically to height × width (the 28→32 MNIST convention).
Dataset pad_images(const Dataset& ds, int64_t height, int64_t width);

namespace shift {
struct InvertContrast {};
struct GaussianNoise {
  double sigma = 0.0;
};
struct ShiftPixels {
  int dx = 0, dy = 0;
};
struct RescaleIntensity {
  double lo = 0.0, hi = 1.0;
};
}  // namespace shift

using ShiftOp = std::variant<shift::InvertContrast, shift::GaussianNoise, shift::ShiftPixels, shift::RescaleIntensity>;

struct ShiftSpec {
  std::vector<ShiftOp> ops;
  uint64_t seed = 17;

  /// invert_contrast then gaussian_noise(0.3), seed 17.
  static ShiftSpec desk_default();
};

/// Applies the ops in order; labels are untouched and pixels are clamped to [0, 1].
Dataset apply_shift(const Dataset& ds, const ShiftSpec& spec);

/// A seeded permutation cut into full batches; the trailing partial batch is dropped.
std::vector<Batch> batches(const Dataset& ds, int64_t batch_size, uint64_t seed);

/// Index lists of the batches produced by batches(); cheap to compute without copying pixels.
std::vector<std::vector<int64_t>> batch_indices(int64_t dataset_size, int64_t batch_size, uint64_t seed);

}  // namespace hesscope

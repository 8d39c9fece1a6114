#include "hesscope/data.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

#include "binary_io.hpp"
#include "hesscope/io.hpp"
#include "hesscope/random.hpp"

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace hesscope {

namespace io {
void write_atomic(const std::filesystem::path& path, const void* data, size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}
}  // namespace io

void write_text_file(const std::filesystem::path& path, const std::string& text) { io::write_atomic(path, text); }

namespace {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;
constexpr uint32_t kRawVersion = 1;

int64_t sample_len(const Shape& s) { return s[1] * s[2] * s[3]; }

}  // namespace

Dataset Dataset::slice(int64_t offset, int64_t count) const {
  if (offset < 0 || count < 0 || offset + count > size()) {
    throw DimensionMismatch("slice [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                            ") out of range for " + std::to_string(size()) + " samples");
  }
  Dataset out;
  Shape shape = images.shape();
  shape[0] = count;
  const int64_t len = sample_len(images.shape());
  const float* src = images.ptr() + offset * len;
  out.images = Tensor(shape, std::vector<float>(src, src + count * len));
  out.labels.assign(labels.begin() + offset, labels.begin() + offset + count);
  out.name = name;
  out.split = split;
  out.class_count = class_count;
  return out;
}

Batch Dataset::gather(const std::vector<int64_t>& indices) const {
  Shape shape = images.shape();
  shape[0] = static_cast<int64_t>(indices.size());
  const int64_t len = sample_len(images.shape());
  Batch batch{Tensor(shape), {}};
  batch.labels.reserve(indices.size());
  float* dst = batch.images.ptr();
  for (int64_t idx : indices) {
    std::copy_n(images.ptr() + idx * len, len, dst);
    dst += len;
    batch.labels.push_back(labels[static_cast<size_t>(idx)]);
  }
  return batch;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto image_bytes = io::read_file(images_path);
  const auto label_bytes = io::read_file(labels_path);

  io::Reader images(image_bytes, images_path.string());
  const uint32_t image_magic = images.u32_be();
  if (image_magic != kIdxImagesMagic) {
    throw BadMagic(images_path.string() + ": expected IDX image magic 0x00000803, found 0x" +
                   [&] { char b[9]; std::snprintf(b, sizeof b, "%08x", image_magic); return std::string(b); }());
  }
  const uint32_t n = images.u32_be();
  const uint32_t rows = images.u32_be();
  const uint32_t cols = images.u32_be();
  const size_t pixel_count = size_t{n} * rows * cols;
  const uint8_t* pixels = images.take(pixel_count);

  io::Reader labels(label_bytes, labels_path.string());
  const uint32_t label_magic = labels.u32_be();
  if (label_magic != kIdxLabelsMagic) {
    throw BadMagic(labels_path.string() + ": expected IDX label magic 0x00000801");
  }
  const uint32_t label_count = labels.u32_be();
  if (label_count != n) {
    throw CountMismatch(std::to_string(n) + " images but " + std::to_string(label_count) + " labels");
  }
  const uint8_t* label_data = labels.take(label_count);

  Dataset ds;
  ds.images = Tensor({int64_t{n}, 1, int64_t{rows}, int64_t{cols}});
  float* dst = ds.images.ptr();
  for (size_t i = 0; i < pixel_count; ++i) dst[i] = static_cast<float>(pixels[i]) * (1.0f / 255.0f);
  ds.labels.assign(label_data, label_data + label_count);
  ds.class_count = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.name = images_path.filename().string();
  return ds;
}

void write_raw(const Dataset& ds, const std::filesystem::path& path) {
  const Shape& s = ds.images.shape();
  io::Writer w;
  w.raw("LLAD", 4);
  w.le<uint32_t>(kRawVersion);
  w.le<uint32_t>(static_cast<uint32_t>(s[0]));
  w.le<uint32_t>(static_cast<uint32_t>(s[1]));
  w.le<uint32_t>(static_cast<uint32_t>(s[2]));
  w.le<uint32_t>(static_cast<uint32_t>(s[3]));
  w.le<uint32_t>(static_cast<uint32_t>(ds.class_count));
  w.raw(ds.images.ptr(), sizeof(float) * static_cast<size_t>(ds.images.numel()));
  for (int label : ds.labels) w.le<uint16_t>(static_cast<uint16_t>(label));
  io::write_atomic(path, w.bytes());
}

Dataset load_raw(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::Reader r(bytes, path.string());
  const uint8_t* magic = r.take(4);
  if (std::memcmp(magic, "LLAD", 4) != 0) throw BadMagic(path.string() + ": not an LLAD container");
  const uint32_t version = r.le<uint32_t>();
  if (version != kRawVersion) {
    throw VersionMismatch(path.string() + ": LLAD version " + std::to_string(version) + ", reader supports 1");
  }
  const int64_t n = r.le<uint32_t>(), c = r.le<uint32_t>(), h = r.le<uint32_t>(), w = r.le<uint32_t>();
  const int k = static_cast<int>(r.le<uint32_t>());
  Dataset ds;
  ds.images = Tensor({n, c, h, w});
  const size_t pixel_bytes = sizeof(float) * static_cast<size_t>(ds.images.numel());
  std::memcpy(ds.images.ptr(), r.take(pixel_bytes), pixel_bytes);
  ds.labels.resize(static_cast<size_t>(n));
  for (auto& label : ds.labels) {
    label = r.le<uint16_t>();
    if (label >= k) throw ManifestError(path.string() + ": label " + std::to_string(label) + " >= class count");
  }
  ds.class_count = k;
  ds.name = path.filename().string();
  return ds;
}

Dataset pad_images(const Dataset& ds, int64_t height, int64_t width) {
  const Shape& s = ds.images.shape();
  if (height < s[2] || width < s[3]) throw SpecError("pad_images cannot shrink " + shape_str(s));
  const int64_t top = (height - s[2]) / 2, left = (width - s[3]) / 2;
  Dataset out = ds;
  out.images = Tensor({s[0], s[1], height, width});
  for (int64_t p = 0; p < s[0] * s[1]; ++p) {
    const float* src = ds.images.ptr() + p * s[2] * s[3];
    float* dst = out.images.ptr() + p * height * width;
    for (int64_t r = 0; r < s[2]; ++r) std::copy_n(src + r * s[3], s[3], dst + (r + top) * width + left);
  }
  return out;
}

ShiftSpec ShiftSpec::desk_default() {
  return ShiftSpec{{shift::InvertContrast{}, shift::GaussianNoise{0.3}}, 17};
}

Dataset apply_shift(const Dataset& ds, const ShiftSpec& spec) {
  Dataset out = ds;
  const Shape& s = ds.images.shape();
  for (size_t op_index = 0; op_index < spec.ops.size(); ++op_index) {
    std::span<float> px = out.images.data();
    std::visit(
        [&](const auto& op) {
          using Op = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<Op, shift::InvertContrast>) {
            for (float& x : px) x = 1.0f - x;
          } else if constexpr (std::is_same_v<Op, shift::GaussianNoise>) {
            if (op.sigma < 0) throw SpecError("gaussian_noise sigma must be >= 0");
            if (op.sigma == 0) return;
            Rng rng(derive_seed(spec.seed, {op_index}));
            NormalSampler normal;
            for (float& x : px) x = static_cast<float>(x + op.sigma * normal(rng));
          } else if constexpr (std::is_same_v<Op, shift::ShiftPixels>) {
            const Tensor before = out.images;
            const int64_t h = s[2], w = s[3];
            for (int64_t p = 0; p < s[0] * s[1]; ++p) {
              const float* src = before.ptr() + p * h * w;
              float* dst = out.images.ptr() + p * h * w;
              for (int64_t y = 0; y < h; ++y) {
                for (int64_t x = 0; x < w; ++x) {
                  const int64_t sy = y - op.dy, sx = x - op.dx;
                  dst[y * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? src[sy * w + sx] : 0.0f;
                }
              }
            }
          } else {
            const float lo = static_cast<float>(op.lo), span = static_cast<float>(op.hi - op.lo);
            for (float& x : px) x = lo + span * x;
          }
        },
        spec.ops[op_index]);
    for (float& x : out.images.data()) x = std::clamp(x, 0.0f, 1.0f);
  }
  return out;
}

std::vector<std::vector<int64_t>> batch_indices(int64_t dataset_size, int64_t batch_size, uint64_t seed) {
  if (batch_size < 1) throw SpecError("batch size must be >= 1");
  if (dataset_size == 0) throw EmptyDataset("cannot batch an empty dataset");
  if (dataset_size < batch_size) {
    throw EmptyDataset(std::to_string(dataset_size) + " samples do not fill one batch of " + std::to_string(batch_size));
  }
  std::vector<int64_t> order(static_cast<size_t>(dataset_size));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int64_t i = dataset_size - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(rng() % static_cast<uint64_t>(i + 1));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  std::vector<std::vector<int64_t>> out;
  for (int64_t start = 0; start + batch_size <= dataset_size; start += batch_size) {
    out.emplace_back(order.begin() + start, order.begin() + start + batch_size);
  }
  return out;
}

std::vector<Batch> batches(const Dataset& ds, int64_t batch_size, uint64_t seed) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(ds.size(), batch_size, seed)) out.push_back(ds.gather(idx));
  return out;
}

}  // namespace hesscope

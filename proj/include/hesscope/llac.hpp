#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "hesscope/tensor.hpp"

namespace hesscope {

/// One tensor of an LLAC container. Parameters are stored as f32; optimizer moments
/// and directions, which live in double precision, as f64.
struct LlacTensor {
  std::string name;
  std::string kind;
  Shape shape;
  std::variant<std::vector<float>, std::vector<double>> data;

  std::string dtype() const { return data.index() == 0 ? "f32" : "f64"; }
};

/// "LLAC", u32 version (1), u64 manifest length, JSON manifest, payload. The manifest
/// carries `meta` fields at top level plus a "tensors" array of
/// {name, kind, shape, dtype, offset, len} with byte offsets into the payload.
struct LlacFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<LlacTensor> tensors;

  const LlacTensor& at(const std::string& name) const;
};

inline constexpr uint32_t kLlacVersion = 1;

void write_llac(const LlacFile& file, const std::filesystem::path& path);
/// Throws BadMagic, VersionMismatch, TruncatedFile or ManifestError.
LlacFile read_llac(const std::filesystem::path& path);

}  // namespace hesscope

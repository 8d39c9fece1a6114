#include "hesscope/llac.hpp"

#include "binary_io.hpp"
#include "hesscope/errors.hpp"

namespace hesscope {

using nlohmann::json;

const LlacTensor& LlacFile::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ManifestError("LLAC container has no tensor '" + name + "'");
}

void write_llac(const LlacFile& file, const std::filesystem::path& path) {
  json manifest = file.meta;
  json entries = json::array();
  io::Writer payload;
  for (const auto& t : file.tensors) {
    const size_t offset = payload.bytes().size();
    std::visit([&](const auto& v) { payload.raw(v.data(), v.size() * sizeof(v[0])); }, t.data);
    entries.push_back({{"name", t.name},
                       {"kind", t.kind},
                       {"shape", t.shape},
                       {"dtype", t.dtype()},
                       {"offset", offset},
                       {"len", payload.bytes().size() - offset}});
  }
  manifest["tensors"] = std::move(entries);
  const std::string text = manifest.dump();

  io::Writer w;
  w.raw("LLAC", 4);
  w.le<uint32_t>(kLlacVersion);
  w.le<uint64_t>(text.size());
  w.raw(text.data(), text.size());
  w.raw(payload.bytes().data(), payload.bytes().size());
  io::write_atomic(path, w.bytes());
}

LlacFile read_llac(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  const std::string where = path.string();
  io::Reader r(bytes, where);
  if (std::memcmp(r.take(4), "LLAC", 4) != 0) throw BadMagic(where + ": not an LLAC container");
  const uint32_t version = r.le<uint32_t>();
  if (version != kLlacVersion) {
    throw VersionMismatch(where + ": LLAC version " + std::to_string(version) + ", reader supports " +
                          std::to_string(kLlacVersion));
  }
  const uint64_t manifest_len = r.le<uint64_t>();
  const auto* text = reinterpret_cast<const char*>(r.take(manifest_len));

  LlacFile file;
  try {
    file.meta = json::parse(text, text + manifest_len);
  } catch (const json::parse_error& e) {
    throw ManifestError(where + ": manifest is not valid JSON (" + e.what() + ")");
  }
  if (!file.meta.is_object() || !file.meta.contains("tensors") || !file.meta["tensors"].is_array()) {
    throw ManifestError(where + ": manifest lacks a tensors array");
  }
  const size_t payload_start = r.pos();
  for (const auto& e : file.meta["tensors"]) {
    LlacTensor t;
    size_t offset = 0, len = 0;
    std::string dtype;
    try {
      t.name = e.at("name").get<std::string>();
      t.kind = e.at("kind").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      dtype = e.at("dtype").get<std::string>();
      offset = e.at("offset").get<size_t>();
      len = e.at("len").get<size_t>();
    } catch (const json::exception& ex) {
      throw ManifestError(where + ": malformed tensor entry (" + ex.what() + ")");
    }
    const size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
    if (width == 0) throw ManifestError(where + ": tensor '" + t.name + "' has unsupported dtype '" + dtype + "'");
    const auto count = static_cast<size_t>(shape_numel(t.shape));
    if (len != count * width) {
      throw ManifestError(where + ": tensor '" + t.name + "' length " + std::to_string(len) + " does not match shape " +
                          shape_str(t.shape));
    }
    if (payload_start + offset + len > bytes.size()) {
      throw TruncatedFile(where + ": payload ends before tensor '" + t.name + "'");
    }
    const uint8_t* src = bytes.data() + payload_start + offset;
    if (width == 4) {
      std::vector<float> v(count);
      std::memcpy(v.data(), src, len);
      t.data = std::move(v);
    } else {
      std::vector<double> v(count);
      std::memcpy(v.data(), src, len);
      t.data = std::move(v);
    }
    file.tensors.push_back(std::move(t));
  }
  file.meta.erase("tensors");
  return file;
}

}  // namespace hesscope

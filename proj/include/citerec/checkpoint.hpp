#pragma once

// Named-tensor container. Byte layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "CRTENSOR"
//   offset 8   u64       header length H in bytes
//   offset 16  H bytes   UTF-8 JSON header
//   offset 16+H          data region
//
// The header is {"meta": {...}, "tensors": [{"name", "shape", "dtype",
// "offset", "nbytes"}, ...]} with offsets relative to the start of the data
// region. dtype is "f64" (IEEE-754 binary64, little-endian). Tensors are
// written in the order given, densely packed. See docs/file_formats.md.

#include "citerec/autodiff.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace citerec::nn {

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct TensorFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  [[nodiscard]] const NamedTensor* find(const std::string& name) const;
};

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
[[nodiscard]] TensorFile read_tensor_file(const std::filesystem::path& path);

/// Snapshot the given parameters (in order) into a container.
TensorFile snapshot(const std::vector<Parameter*>& params, nlohmann::json meta = nlohmann::json::object());
/// Copy values back by name. Every parameter must be present with a matching
/// shape; extra tensors in the file are an error too.
void restore(const TensorFile& file, const std::vector<Parameter*>& params);

}  // namespace citerec::nn

#include "citerec/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace citerec::nn {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'R', 'T', 'E', 'N', 'S', 'O', 'R'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

const NamedTensor* TensorFile::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  nlohmann::json header;
  header["meta"] = file.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : file.tensors) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.value.size()) * 8u;
    header["tensors"].push_back({{"name", t.name},
                                 {"shape", {t.value.rows(), t.value.cols()}},
                                 {"dtype", "f64"},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string header_text = header.dump();

  std::string blob(kMagic.begin(), kMagic.end());
  put_u64(blob, header_text.size());
  blob += header_text;
  blob.reserve(blob.size() + offset);
  for (const auto& t : file.tensors) {
    const double* data = t.value.data();
    for (Index i = 0; i < t.value.size(); ++i) put_u64(blob, std::bit_cast<std::uint64_t>(data[i]));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open tensor file " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic.data(), kMagic.size()) != 0) {
    throw std::runtime_error(path.string() + ": not a tensor file (bad magic)");
  }
  const std::uint64_t header_len = get_u64(bytes + 8);
  if (16 + header_len > blob.size()) throw std::runtime_error(path.string() + ": truncated header");
  const auto header = nlohmann::json::parse(blob.substr(16, header_len));
  const std::uint64_t data_start = 16 + header_len;

  TensorFile file;
  file.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    if (entry.at("dtype") != "f64") {
      throw std::runtime_error(path.string() + ": unsupported dtype " + entry.at("dtype").dump());
    }
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    if (shape.size() != 2) throw std::runtime_error(path.string() + ": tensors must be 2-d");
    const std::uint64_t off = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t count = static_cast<std::uint64_t>(shape[0] * shape[1]);
    if (data_start + off + count * 8 > blob.size()) {
      throw std::runtime_error(path.string() + ": tensor " + entry.at("name").get<std::string>() +
                               " runs past end of file");
    }
    NamedTensor t{entry.at("name").get<std::string>(), Matrix(shape[0], shape[1])};
    const unsigned char* p = bytes + data_start + off;
    for (std::uint64_t i = 0; i < count; ++i) t.value.data()[i] = std::bit_cast<double>(get_u64(p + 8 * i));
    file.tensors.push_back(std::move(t));
  }
  return file;
}

TensorFile snapshot(const std::vector<Parameter*>& params, nlohmann::json meta) {
  TensorFile file;
  file.meta = std::move(meta);
  for (const Parameter* p : params) file.tensors.push_back({p->name, p->value});
  return file;
}

void restore(const TensorFile& file, const std::vector<Parameter*>& params) {
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : file.tensors) by_name.emplace(t.name, &t);
  if (by_name.size() != params.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(by_name.size()) +
                             " tensors, model expects " + std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing tensor " + p->name);
    const Matrix& v = it->second->value;
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
      throw std::runtime_error("checkpoint tensor " + p->name + " has shape " +
                               std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                               ", model expects " + std::to_string(p->value.rows()) + "x" +
                               std::to_string(p->value.cols()));
    }
    p->value = v;
    p->zero_grad();
  }
}

}  // namespace citerec::nn

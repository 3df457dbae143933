#include "crackseg/container.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "crackseg/common.hpp"

namespace crackseg {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

enum class DType : uint8_t { kF32 = 0, kF64 = 1, kI64 = 2, kU8 = 3 };

DType dtype_tag(const torch::Tensor& t) {
  switch (t.scalar_type()) {
    case torch::kFloat32: return DType::kF32;
    case torch::kFloat64: return DType::kF64;
    case torch::kInt64: return DType::kI64;
    case torch::kUInt8: return DType::kU8;
    default:
      fail(Err::CorruptWeights, "unsupported tensor dtype for container");
  }
}

torch::ScalarType scalar_type(DType tag) {
  switch (tag) {
    case DType::kF32: return torch::kFloat32;
    case DType::kF64: return torch::kFloat64;
    case DType::kI64: return torch::kInt64;
    case DType::kU8: return torch::kUInt8;
  }
  fail(Err::CorruptWeights, "unknown dtype tag");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) fail(Err::CorruptWeights, "unexpected end of file");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, uint32_t max_len = 1u << 20) {
  auto len = read_pod<uint32_t>(is);
  if (len > max_len) fail(Err::CorruptWeights, "string length out of range");
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) fail(Err::CorruptWeights, "unexpected end of file");
  return s;
}

}  // namespace

void Container::put(const std::string& name, const torch::Tensor& t) {
  tensors.emplace_back(name, t.detach().cpu().contiguous());
}

const torch::Tensor* Container::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

torch::Tensor Container::get(const std::string& name) const {
  const auto* t = find(name);
  if (!t) fail(Err::CorruptWeights, "missing tensor '" + name + "'");
  return *t;
}

std::string Container::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) fail(Err::CorruptWeights, "missing metadata key '" + key + "'");
  return it->second;
}

int64_t Container::meta_i64(const std::string& key) const {
  return std::stoll(meta_at(key));
}

double Container::meta_f64(const std::string& key) const {
  return std::stod(meta_at(key));
}

std::vector<int64_t> Container::meta_i64_list(const std::string& key) const {
  std::vector<int64_t> out;
  std::stringstream ss(meta_at(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoll(item));
  }
  return out;
}

std::vector<double> Container::meta_f64_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(meta_at(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

std::string join_i64(const std::vector<int64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::string join_f64(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

void write_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(Err::IoError, "cannot open '" + path.string() + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, kContainerVersion);
  write_pod<uint32_t>(os, static_cast<uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    write_string(os, k);
    write_string(os, v);
  }
  write_pod<uint32_t>(os, static_cast<uint32_t>(c.tensors.size()));
  for (const auto& [name, raw] : c.tensors) {
    auto t = raw.detach().cpu().contiguous();
    write_string(os, name);
    write_pod<uint8_t>(os, static_cast<uint8_t>(dtype_tag(t)));
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.dim()));
    for (int64_t d = 0; d < t.dim(); ++d) write_pod<uint64_t>(os, static_cast<uint64_t>(t.size(d)));
    const auto nbytes = static_cast<uint64_t>(t.numel() * t.element_size());
    write_pod<uint64_t>(os, nbytes);
    os.write(static_cast<const char*>(t.const_data_ptr()), static_cast<std::streamsize>(nbytes));
  }
  os.flush();
  if (!os) fail(Err::IoError, "write failed for '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Err::BackendUnavailable, "cannot open '" + path.string() + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(Err::CorruptWeights, "bad magic in '" + path.string() + "'");
  }
  auto version = read_pod<uint32_t>(is);
  if (version != kContainerVersion) {
    fail(Err::VersionMismatch, "container version " + std::to_string(version) + " (expected " +
                                   std::to_string(kContainerVersion) + ")");
  }
  Container c;
  auto n_meta = read_pod<uint32_t>(is);
  for (uint32_t i = 0; i < n_meta; ++i) {
    auto k = read_string(is);
    auto v = read_string(is, 1u << 24);
    c.meta.emplace(std::move(k), std::move(v));
  }
  auto n_tensors = read_pod<uint32_t>(is);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    auto name = read_string(is);
    auto tag = static_cast<DType>(read_pod<uint8_t>(is));
    auto ndim = read_pod<uint32_t>(is);
    if (ndim > 8) fail(Err::CorruptWeights, "tensor rank out of range");
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = static_cast<int64_t>(read_pod<uint64_t>(is));
    auto nbytes = read_pod<uint64_t>(is);
    auto t = torch::empty(dims, torch::TensorOptions().dtype(scalar_type(tag)));
    if (nbytes != static_cast<uint64_t>(t.numel() * t.element_size())) {
      fail(Err::CorruptWeights, "tensor '" + name + "' payload size mismatch");
    }
    is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!is) fail(Err::CorruptWeights, "truncated tensor payload for '" + name + "'");
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

std::string tensor_table_digest(const std::vector<std::pair<std::string, torch::Tensor>>& tensors) {
  uint64_t h = 14695981039346656037ull;
  for (const auto& [name, raw] : tensors) {
    auto t = raw.detach().cpu().contiguous();
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.const_data_ptr(), static_cast<size_t>(t.numel() * t.element_size()), h);
  }
  return hex64(h);
}

}  // namespace crackseg

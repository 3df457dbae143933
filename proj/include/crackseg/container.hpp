#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace crackseg {

inline constexpr uint32_t kContainerVersion = 1;

/// Checkpoint container: format_version, string metadata, and an ordered
/// named-tensor table (shape + dtype tag + little-endian payload).
struct Container {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  void put(const std::string& name, const torch::Tensor& t);
  const torch::Tensor* find(const std::string& name) const;
  torch::Tensor get(const std::string& name) const;  // CorruptWeights if absent

  bool has_meta(const std::string& key) const { return meta.count(key) != 0; }
  std::string meta_at(const std::string& key) const;  // CorruptWeights if absent
  int64_t meta_i64(const std::string& key) const;
  double meta_f64(const std::string& key) const;
  std::vector<int64_t> meta_i64_list(const std::string& key) const;  // comma separated
  std::vector<double> meta_f64_list(const std::string& key) const;
};

std::string join_i64(const std::vector<int64_t>& v);
std::string join_f64(const std::vector<double>& v);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

/// FNV-1a digest over the container's tensor table (names + raw bytes).
std::string tensor_table_digest(const std::vector<std::pair<std::string, torch::Tensor>>& tensors);

}  // namespace crackseg

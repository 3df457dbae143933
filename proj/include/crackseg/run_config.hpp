#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace crackseg {

/// Flat key-value run configuration: `key = value` lines in files, `--key
/// value` overrides on the CLI. Unknown keys are rejected; every command
/// writes the fully resolved document next to its outputs.
class RunConfig {
 public:
  static const std::vector<std::pair<std::string, std::string>>& known_keys();  // (key, default)
  static bool is_known(const std::string& key);

  static RunConfig from_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);  // ConfigError on unknown key
  bool is_set(const std::string& key) const;

  /// Resolved value: explicit setting or default.
  std::string str(const std::string& key) const;
  int64_t i64(const std::string& key) const;
  double f64(const std::string& key) const;
  bool flag(const std::string& key) const;                    // true/false/1/0
  std::pair<int, int> hw(const std::string& key) const;       // "HxW"
  std::vector<int> int_list(const std::string& key) const;    // comma separated

  void write_resolved(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace crackseg

#include "crackseg/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "crackseg/common.hpp"

namespace crackseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& RunConfig::known_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"base_channels", "64"},
      {"fusion_mode", "igam"},
      {"backend", "stub:0"},
      {"seed", "0"},
      {"deterministic", "false"},
      {"lr0", "0.0003"},
      {"epochs", "100"},
      {"batch_size", "2"},
      {"weight_decay", "0.01"},
      {"checkpoint_every", "1"},
      {"flip_h_prob", "0.5"},
      {"flip_v_prob", "0.5"},
      {"rotation_choices", "0,90,180,270"},
      {"target_size", "512x512"},
      {"train_root", ""},
      {"val_root", ""},
      {"val_fraction", "0.1"},
      {"eval_root", ""},
      {"out_dir", "runs/out"},
      {"threshold", "0.5"},
      {"images_dirname", "images"},
      {"masks_dirname", "masks"},
      {"eval_resize", "true"},
      {"workers", "1"},
      {"n_maps", "9"},
      {"input_size", "512x512"},
      {"n_warmup", "3"},
      {"n_timed", "10"},
      {"resume", ""},
  };
  return keys;
}

bool RunConfig::is_known(const std::string& key) {
  const auto& keys = known_keys();
  return std::any_of(keys.begin(), keys.end(), [&](const auto& kv) { return kv.first == key; });
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(Err::ConfigError, "cannot open config file '" + path.string() + "'");
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      fail(Err::ConfigError,
           "expected 'key = value' at " + path.string() + ":" + std::to_string(line_no));
    }
    cfg.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!is_known(key)) fail(Err::ConfigError, "unknown config key '" + key + "'");
  values_[key] = value;
}

bool RunConfig::is_set(const std::string& key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

std::string RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it != values_.end()) return it->second;
  for (const auto& [k, def] : known_keys()) {
    if (k == key) return def;
  }
  fail(Err::ConfigError, "unknown config key '" + key + "'");
}

int64_t RunConfig::i64(const std::string& key) const {
  try {
    return std::stoll(str(key));
  } catch (const std::exception&) {
    fail(Err::ConfigError, "key '" + key + "' is not an integer: '" + str(key) + "'");
  }
}

double RunConfig::f64(const std::string& key) const {
  try {
    return std::stod(str(key));
  } catch (const std::exception&) {
    fail(Err::ConfigError, "key '" + key + "' is not a number: '" + str(key) + "'");
  }
}

bool RunConfig::flag(const std::string& key) const {
  auto v = str(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(Err::ConfigError, "key '" + key + "' is not a boolean: '" + str(key) + "'");
}

std::pair<int, int> RunConfig::hw(const std::string& key) const {
  const auto v = str(key);
  const auto x = v.find('x');
  if (x == std::string::npos) fail(Err::ConfigError, "key '" + key + "' must look like HxW: '" + v + "'");
  try {
    return {std::stoi(v.substr(0, x)), std::stoi(v.substr(x + 1))};
  } catch (const std::exception&) {
    fail(Err::ConfigError, "key '" + key + "' must look like HxW: '" + v + "'");
  }
}

std::vector<int> RunConfig::int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(str(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim(item);
    if (t.empty()) continue;
    try {
      out.push_back(std::stoi(t));
    } catch (const std::exception&) {
      fail(Err::ConfigError, "key '" + key + "' holds a non-integer entry: '" + t + "'");
    }
  }
  return out;
}

void RunConfig::write_resolved(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(Err::IoError, "cannot write '" + path.string() + "'");
  for (const auto& [key, def] : known_keys()) {
    os << key << " = " << str(key) << "\n";
  }
}

}  // namespace crackseg

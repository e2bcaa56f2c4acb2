#include "symcad/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "symcad/rng.hpp"

namespace symcad {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

}  // namespace

ConfigMap ConfigMap::parse_string(const std::string& text) {
  ConfigMap cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
    if (cfg.kv_.count(key))
      throw std::runtime_error("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    cfg.kv_[key] = value;
  }
  return cfg;
}

ConfigMap ConfigMap::parse_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str());
}

std::string ConfigMap::get_str(const std::string& key) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) throw std::runtime_error("missing config key: " + key);
  touched_.insert(key);
  return it->second;
}

int64_t ConfigMap::get_i64(const std::string& key) const {
  const std::string v = get_str(key);
  try {
    size_t pos = 0;
    const int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': not an integer: '" + v + "'");
  }
}

uint64_t ConfigMap::get_u64(const std::string& key) const {
  const std::string v = get_str(key);
  try {
    size_t pos = 0;
    const uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': not an unsigned integer: '" + v + "'");
  }
}

double ConfigMap::get_f64(const std::string& key) const {
  const std::string v = get_str(key);
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': not a number: '" + v + "'");
  }
}

bool ConfigMap::get_bool(const std::string& key) const {
  const std::string v = get_str(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config key '" + key + "': not a boolean: '" + v + "'");
}

std::vector<double> ConfigMap::get_f64_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& p : split_list(get_str(key))) {
    try {
      out.push_back(std::stod(p));
    } catch (const std::exception&) {
      throw std::runtime_error("config key '" + key + "': not a number list");
    }
  }
  return out;
}

std::vector<int64_t> ConfigMap::get_i64_list(const std::string& key) const {
  std::vector<int64_t> out;
  for (const auto& p : split_list(get_str(key))) {
    try {
      out.push_back(std::stoll(p));
    } catch (const std::exception&) {
      throw std::runtime_error("config key '" + key + "': not an integer list");
    }
  }
  return out;
}

std::string ConfigMap::get_str(const std::string& key, const std::string& fallback) const {
  return has(key) ? get_str(key) : fallback;
}
int64_t ConfigMap::get_i64(const std::string& key, int64_t fallback) const {
  return has(key) ? get_i64(key) : fallback;
}
double ConfigMap::get_f64(const std::string& key, double fallback) const {
  return has(key) ? get_f64(key) : fallback;
}
bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

std::vector<std::string> ConfigMap::unknown_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : kv_)
    if (!touched_.count(k)) out.push_back(k);
  return out;
}

std::string ConfigMap::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : kv_) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

uint64_t ConfigMap::hash() const { return fnv1a64(canonical_text()); }

}  // namespace symcad

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace symcad {

/// Line-oriented configuration: `section.key = value`, one per line,
/// `#` comments and blank lines ignored. Keys are tracked on access so a
/// caller can reject typos via `unknown_keys()`.
class ConfigMap {
 public:
  static ConfigMap parse_file(const std::filesystem::path& path);
  static ConfigMap parse_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get_str(const std::string& key) const;
  int64_t get_i64(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  double get_f64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_f64_list(const std::string& key) const;
  std::vector<int64_t> get_i64_list(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& fallback) const;
  int64_t get_i64(const std::string& key, int64_t fallback) const;
  double get_f64(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Keys present in the file but never read through a getter.
  std::vector<std::string> unknown_keys() const;

  /// Sorted `key = value` lines; the basis of the config hash, so two
  /// configs hash equal iff they define the same key/value set.
  std::string canonical_text() const;
  uint64_t hash() const;

 private:
  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> touched_;
};

}  // namespace symcad

#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace gas {

/// Flat `key = value` text config. Lines starting with '#' are comments.
/// Keys are kept sorted so serialization is canonical.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text);
  static KeyValues load(const std::filesystem::path& path);

  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  bool contains(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  /// Overlays `other` on top of this; other's keys win.
  void merge(const KeyValues& other);

  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int_or(const std::string& key, long long fallback) const;

  /// Throws ConfigError naming the first missing or unexpected key.
  void require_exact_keys(const std::set<std::string>& keys) const;
  void reject_unknown_keys(const std::set<std::string>& keys) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Shortest round-trip decimal text of a double.
std::string format_double(double x);
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

}  // namespace gas

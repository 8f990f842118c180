#include "gas/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "gas/common.hpp"

namespace gas {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  text = trim(text);
  double out = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ConfigError("not a number: '" + std::string(text) + "'");
  return out;
}

long long parse_int(std::string_view text) {
  text = trim(text);
  long long out = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ConfigError("not an integer: '" + std::string(text) + "'");
  return out;
}

KeyValues KeyValues::parse(std::string_view text) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key(trim(body.substr(0, eq)));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (kv.values_.count(key)) throw ConfigError("duplicate key '" + key + "'");
    kv.values_[key] = std::string(trim(body.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string KeyValues::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

void KeyValues::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << serialize();
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

const std::string& KeyValues::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key) const {
  try {
    return parse_double(get(key));
  } catch (const ConfigError& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

double KeyValues::get_double_or(const std::string& key, double fallback) const {
  return contains(key) ? get_double(key) : fallback;
}

long long KeyValues::get_int(const std::string& key) const {
  try {
    return parse_int(get(key));
  } catch (const ConfigError& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

long long KeyValues::get_int_or(const std::string& key, long long fallback) const {
  return contains(key) ? get_int(key) : fallback;
}

void KeyValues::require_exact_keys(const std::set<std::string>& keys) const {
  for (const auto& k : keys)
    if (!contains(k)) throw ConfigError("missing key '" + k + "'");
  reject_unknown_keys(keys);
}

void KeyValues::reject_unknown_keys(const std::set<std::string>& keys) const {
  for (const auto& [k, v] : values_)
    if (!keys.count(k)) throw ConfigError("unknown key '" + k + "'");
}

}  // namespace gas

#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "streamtopics/errors.hpp"

namespace stm {

// Flat `key = value` configuration. '#' starts a comment, blank lines are
// skipped, later assignments win. Values are kept as raw strings until a
// typed getter is called.
class Config {
 public:
  Config() = default;

  static Config from_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string stripped = trim(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      const auto eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
      const std::string key = trim(stripped.substr(0, eq));
      const std::string value = trim(stripped.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      for (char c : key)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.')
          throw ConfigError("config line " + std::to_string(line_no) + ": bad key '" + key + "'");
      cfg.kv_[key] = value;
    }
    return cfg;
  }

  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return from_string(text.str());
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse_u64(it->second, key);
  }

  std::uint32_t get_u32(const std::string& key, std::uint32_t fallback) const {
    const std::uint64_t v = get_u64(key, fallback);
    if (v > 0xffffffffull) throw ConfigError("config key '" + key + "' overflows 32 bits");
    return static_cast<std::uint32_t>(v);
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not a number: '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: '" + it->second + "'");
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

  /// Rejects keys outside the given set. Prefixes ending in '.' admit any
  /// key that starts with them (used for indexed families like topic.0.*).
  void restrict_to(const std::set<std::string>& known) const {
    for (const auto& [key, value] : kv_) {
      if (known.count(key)) continue;
      bool matched = false;
      for (const auto& k : known) {
        if (!k.empty() && k.back() == '.' && key.rfind(k, 0) == 0) {
          matched = true;
          break;
        }
      }
      if (!matched) throw ConfigError("unknown config key '" + key + "'");
    }
  }

  /// Deterministic serialization, keys sorted.
  std::string serialize() const {
    std::string out;
    for (const auto& [key, value] : kv_) {
      out += key;
      out += " = ";
      out += value;
      out += '\n';
    }
    return out;
  }

  static std::uint64_t parse_u64(const std::string& text, const std::string& key) {
    if (text.empty()) throw ConfigError("config key '" + key + "' is empty");
    std::uint64_t value = 0;
    for (char c : text) {
      if (c < '0' || c > '9')
        throw ConfigError("config key '" + key + "' is not an unsigned integer: '" + text + "'");
      if (value > (UINT64_MAX - static_cast<std::uint64_t>(c - '0')) / 10)
        throw ConfigError("config key '" + key + "' overflows");
      value = value * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return value;
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace stm

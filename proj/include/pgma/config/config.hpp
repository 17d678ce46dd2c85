// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat "key = value" configuration. Lines starting with '#' are comments.
// The canonical text (sorted keys, one per line) is what gets hashed and
// stored in checkpoints and reports.

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgma/core/rng.hpp"

namespace pgma {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text, const std::string& origin = "<config>") {
    Config c;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path.string());
  }

  // "key=value" override from the command line.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv);
    values_[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }

  void merge(const Config& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  template <typename V>
  void set(const std::string& key, const V& v) {
    std::ostringstream oss;
    if constexpr (std::is_same_v<V, bool>) oss << (v ? "true" : "false");
    else if constexpr (std::is_floating_point_v<V>) oss << std::setprecision(17) << v;
    else oss << v;
    values_[key] = oss.str();
  }

  std::string get_string(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  template <typename V>
  V get(const std::string& key, const V& def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    return convert<V>(key, it->second);
  }

  template <typename V>
  std::vector<V> get_list(const std::string& key, const std::vector<V>& def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::vector<V> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(convert<V>(key, trim(item)));
    return out;
  }

  template <typename V>
  void set_list(const std::string& key, const std::vector<V>& v) {
    std::ostringstream oss;
    for (std::size_t i = 0; i < v.size(); ++i) oss << (i ? "," : "") << v[i];
    values_[key] = oss.str();
  }

  // Rejects keys outside `known`.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [k, _] : values_) {
      if (!known.count(k)) throw ConfigError("unknown config key: " + k);
    }
  }

  // Subset of keys with the given prefix.
  Config with_prefix(const std::string& prefix) const {
    Config c;
    for (const auto& [k, v] : values_) if (k.rfind(prefix, 0) == 0) c.values_[k] = v;
    return c;
  }

  std::string text() const {
    std::ostringstream oss;
    for (const auto& [k, v] : values_) oss << k << " = " << v << '\n';
    return oss.str();
  }

  std::uint64_t hash() const { return fnv1a(text()); }

  std::string hash_hex() const {
    std::ostringstream oss;
    oss << std::hex << std::setw(16) << std::setfill('0') << hash();
    return oss.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  template <typename V>
  static V convert(const std::string& key, const std::string& s) {
    if constexpr (std::is_same_v<V, std::string>) {
      return s;
    } else if constexpr (std::is_same_v<V, bool>) {
      if (s == "true" || s == "1" || s == "yes") return true;
      if (s == "false" || s == "0" || s == "no") return false;
      throw ConfigError("config key " + key + ": expected boolean, got '" + s + "'");
    } else if constexpr (std::is_floating_point_v<V>) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return static_cast<V>(v);
      } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected number, got '" + s + "'");
      }
    } else {
      V v{};
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ConfigError("config key " + key + ": expected integer, got '" + s + "'");
      }
      return v;
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace pgma

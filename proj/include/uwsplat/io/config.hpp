// Copyright Contributors to the uwsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uwsplat/common.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

namespace uwsplat {

/// Flat `key = value` run configuration ('#' starts a comment; blank lines
/// ignored). Typed getters record which keys were consumed so unknown keys
/// can be rejected after the schema has been applied.
class KeyValueConfig {
public:
  KeyValueConfig() = default;

  static KeyValueConfig from_file(const std::string &path) {
    std::ifstream in(path);
    if (!in)
      fail(ErrorCode::MissingFile, "cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str(), path);
  }

  static KeyValueConfig from_string(const std::string &text,
                                    const std::string &origin = "<string>") {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos)
        line.resize(hash);
      const auto strip = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos)
          return std::string{};
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
      };
      if (strip(line).empty())
        continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        fail(ErrorCode::ConfigError, origin + ":" + std::to_string(line_no) +
                                         ": expected key = value");
      const std::string key = strip(line.substr(0, eq));
      const std::string val = strip(line.substr(eq + 1));
      if (key.empty())
        fail(ErrorCode::ConfigError,
             origin + ":" + std::to_string(line_no) + ": empty key");
      cfg.values_[key] = val;
    }
    return cfg;
  }

  bool has(const std::string &key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string &key, const std::string &fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string &key, double fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end())
      return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size())
        throw std::invalid_argument{""};
      return v;
    } catch (const std::exception &) {
      fail(ErrorCode::ConfigError,
           "key '" + key + "': '" + it->second + "' is not a number");
    }
  }

  std::int64_t get_int(const std::string &key, std::int64_t fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end())
      return fallback;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size())
        throw std::invalid_argument{""};
      return v;
    } catch (const std::exception &) {
      fail(ErrorCode::ConfigError,
           "key '" + key + "': '" + it->second + "' is not an integer");
    }
  }

  bool get_bool(const std::string &key, bool fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end())
      return fallback;
    if (it->second == "true" || it->second == "1")
      return true;
    if (it->second == "false" || it->second == "0")
      return false;
    fail(ErrorCode::ConfigError,
         "key '" + key + "': '" + it->second + "' is not a boolean");
  }

  /// Call after all getters: any key never consumed is a config error.
  void reject_unknown_keys() const {
    for (const auto &[key, val] : values_)
      if (consumed_.find(key) == consumed_.end())
        fail(ErrorCode::ConfigError, "unknown config key '" + key + "'");
  }

  const std::map<std::string, std::string> &values() const { return values_; }

private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

} // namespace uwsplat

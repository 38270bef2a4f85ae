// SPDX-License-Identifier: Apache-2.0
//
// Strict JSON config reading. Every object is walked through a FieldReader
// which remembers the keys it consumed; finish() rejects anything left over
// so that a misspelled field is an error, never a silent default.
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <type_traits>
#include <string>
#include <vector>

#include "json.hpp"

#include "drm/errors.hpp"

namespace drm::config {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline json parse_text(const std::string& text, const std::string& origin = "<config>") {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
}

inline json load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path);
}

class FieldReader {
 public:
  FieldReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const std::string& path() const { return path_; }
  std::string child(const std::string& key) const { return path_ + "." + key; }
  bool has(const std::string& key) const { return obj_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!obj_.contains(key)) return fallback;
    return convert<T>(obj_.at(key), child(key));
  }

  template <typename T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) throw ConfigError(child(key) + ": required field missing");
    return convert<T>(obj_.at(key), child(key));
  }

  template <typename T>
  std::optional<T> optional(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return std::nullopt;
    return convert<T>(obj_.at(key), child(key));
  }

  /// Raw sub-value (object or array) for nested readers.
  const json* raw(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.contains(it.key())) throw ConfigError(child(it.key()) + ": unknown field");
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& where) {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(where + ": expected a number");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(where + ": expected an integer");
        if (std::is_unsigned_v<T> && v.is_number_integer() && v.get<std::int64_t>() < 0) {
          throw ConfigError(where + ": expected a non-negative integer");
        }
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(where + ": expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

/// Reads and checks schema_version at the top of a config.
inline void check_schema_version(FieldReader& r) {
  const int v = r.get<int>("schema_version", kSchemaVersion);
  if (v != kSchemaVersion) {
    throw ConfigError(r.child("schema_version") + ": unsupported version " + std::to_string(v));
  }
}

template <typename T>
std::vector<T> read_list(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(FieldReader::convert<T>(v[i], where + "[" + std::to_string(i) + "]"));
  }
  return out;
}

}  // namespace drm::config

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "mpsl/errors.hpp"

namespace mpsl {

// Typed field access on one JSON object, with key-path error messages.
class JsonFields {
 public:
  JsonFields(const nlohmann::json& j, std::string path, std::initializer_list<const char*> known)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    std::set<std::string> k(known.begin(), known.end());
    for (const auto& [key, value] : j_.items()) {
      if (!k.count(key)) throw ConfigError(path_ + "." + key + ": unknown key");
    }
  }

  bool has(const char* key) const { return j_.contains(key) && !j_[key].is_null(); }
  std::string path(const char* key) const { return path_ + "." + key; }
  const nlohmann::json& raw(const char* key) const { return j_[key]; }

  void size(const char* key, std::size_t& dst) const {
    if (!has(key)) return;
    const auto& v = j_[key];
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(path(key) + ": expected a non-negative integer");
    dst = v.get<std::size_t>();
  }
  void u64(const char* key, std::uint64_t& dst) const {
    if (!has(key)) return;
    const auto& v = j_[key];
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(path(key) + ": expected a non-negative integer");
    dst = v.get<std::uint64_t>();
  }
  void real(const char* key, double& dst) const {
    if (!has(key)) return;
    if (!j_[key].is_number()) throw ConfigError(path(key) + ": expected a number");
    dst = j_[key].get<double>();
  }
  void boolean(const char* key, bool& dst) const {
    if (!has(key)) return;
    if (!j_[key].is_boolean()) throw ConfigError(path(key) + ": expected a boolean");
    dst = j_[key].get<bool>();
  }
  std::optional<std::string> str(const char* key) const {
    if (!has(key)) return std::nullopt;
    if (!j_[key].is_string()) throw ConfigError(path(key) + ": expected a string");
    return j_[key].get<std::string>();
  }
  // Runs `parse` on a string field, prefixing any ConfigError with the key path.
  template <typename T, typename F>
  void parsed(const char* key, T& dst, F parse) const {
    auto s = str(key);
    if (!s) return;
    try {
      dst = parse(*s);
    } catch (const ConfigError& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
};

}  // namespace mpsl

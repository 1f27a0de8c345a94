#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "kgqa/types.hpp"

namespace kgqa {

/// Flat `key = value` text config; '#' starts a comment. CLI flags override
/// config keys, which override defaults.
class Config {
 public:
  Config() = default;
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  /// FNV-1a over the canonical sorted key=value rendering.
  std::uint64_t hash() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string hash_hex(std::uint64_t h);

}  // namespace kgqa

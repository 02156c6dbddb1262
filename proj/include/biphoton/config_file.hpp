#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "biphoton/geometry.hpp"

namespace biphoton {

// Parses a length with an optional unit suffix (m, mm, um, nm). A bare number
// is taken in meters.
double parse_length(std::string_view text);

// Flat `key = value` document with `#` comments, shared by every module.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.contains(key); }
  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  double length(const std::string& key, double fallback) const;
  double number(const std::string& key, double fallback) const;
  long long integer(const std::string& key, long long fallback) const;
  std::string text(const std::string& key, const std::string& fallback) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::string source_ = "<config>";
  std::map<std::string, std::string> values_;
};

OpticalConfig optical_config_from(const KeyValueConfig& kv);
// Shortest decimal text that parses back to the same double.
std::string format_number(double v);

// Writes the geometry keys in the same document format; parses back exactly.
void write_optical_config(std::ostream& out, const OpticalConfig& cfg);

// Format helpers for "WxH" pairs and "x,y" lengths.
std::pair<int, int> parse_dims(std::string_view text);
Vec2 parse_length_pair(std::string_view text);

}  // namespace biphoton

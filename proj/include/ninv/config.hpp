#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ninv/errors.hpp"

namespace ninv {

// Weight: finite and >= 0. Counts: comma-separated positive integers.
enum class KeyType { Count, Weight, Bool, Text, Path, Counts, Choice, Shape };

struct KeyDef {
  std::string name;
  KeyType type;
  std::string default_value;
  std::vector<std::string> choices;  // KeyType::Choice only
};

/// Every accepted key with its default, in resolved-file order.
const std::vector<KeyDef>& config_keys();

/// Flat key = value configuration. Every known key is present after
/// parsing; values are already type-checked.
class RunConfig {
 public:
  RunConfig();

  /// Parses `key = value` lines (# starts a comment). All problems (unknown
  /// keys, duplicates, malformed values) are collected and thrown together
  /// as one ConfigError.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// Overrides one key with the same checks as parsing.
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  std::uint64_t count(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::size_t> counts(const std::string& key) const;
  // Comma-separated items, empty list for an empty value.
  std::vector<std::string> list(const std::string& key) const;

  /// `key = value` lines in key-table order with every default filled in.
  std::string resolved() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ninv

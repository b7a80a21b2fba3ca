#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace occfill {

/// Flat `key = value` settings shared by every command. The set of keys is
/// fixed; assigning an unknown key or an ill-typed value throws ConfigError.
class Config {
 public:
  enum class Kind { Integer, Real, Boolean, Text, Path, Choice };

  struct KeyInfo {
    std::string key;
    Kind kind;
    std::string default_value;
    std::vector<std::string> choices;  // Kind::Choice only
    std::string help;
  };

  Config();

  /// Defaults overlaid with the contents of a config file.
  static Config from_file(const std::filesystem::path& path);
  static const std::vector<KeyInfo>& schema();

  /// Parses `key = value` lines; '#' starts a comment.
  void merge_text(const std::string& text, const std::string& origin = "<text>");
  void set(const std::string& key, const std::string& value);
  /// Accepts "key=value".
  void apply_override(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::filesystem::path get_path(const std::string& key) const;

  /// Every effective setting, one `key = value` per line, sorted by key.
  std::string dump() const;
  uint64_t hash() const;
  /// Writes dump() to `<dir>/resolved_config`.
  void write_resolved(const std::filesystem::path& dir) const;

 private:
  const KeyInfo& info(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

/// Trims ASCII whitespace on both ends.
std::string trim(const std::string& s);
/// Splits on a single-character delimiter, keeping empty fields.
std::vector<std::string> split(const std::string& s, char delim);

}  // namespace occfill

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace cst {

/// Flat `key = value` text grouped under `[section]` headers; `#` and `;`
/// start comments. Keys read through the typed getters are marked as used so
/// that finish() can reject anything unrecognised.
class IniDocument {
 public:
  static IniDocument parse(std::string_view text);

  bool has(const std::string& section, const std::string& key) const;
  std::optional<std::string> raw(const std::string& section, const std::string& key);

  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback);
  double get_double(const std::string& section, const std::string& key, double fallback);
  std::size_t get_size(const std::string& section, const std::string& key, std::size_t fallback);
  bool get_bool(const std::string& section, const std::string& key, bool fallback);
  std::vector<std::string> get_list(const std::string& section, const std::string& key,
                                    const std::vector<std::string>& fallback);
  std::vector<double> get_doubles(const std::string& section, const std::string& key, const std::vector<double>& fallback);
  std::vector<std::size_t> get_sizes(const std::string& section, const std::string& key,
                                     const std::vector<std::size_t>& fallback);

  // Throws FormatError naming the first key no getter asked for.
  void finish() const;

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  const Entry* find(const std::string& section, const std::string& key);

  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::set<std::pair<std::string, std::string>> used_;
};

std::vector<std::string> split_list(std::string_view text);
std::string trim(std::string_view text);

// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view text);

std::string read_text_file(const std::string& path);

}  // namespace cst

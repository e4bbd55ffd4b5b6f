#include "cst/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cst/diffnet.hpp"
#include "cst/error.hpp"

namespace cst {

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto piece = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

IniDocument IniDocument::parse(std::string_view text) {
  IniDocument doc;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw FormatError("unterminated section header", line_no);
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      if (section.empty()) throw FormatError("empty section name", line_no);
      doc.sections_[section];
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw FormatError("expected key = value", line_no);
    if (section.empty()) throw FormatError("key outside of any [section]", line_no);
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw FormatError("empty key", line_no);
    auto& entries = doc.sections_[section];
    if (entries.contains(key)) throw FormatError("duplicate key '" + key + "'", line_no);
    entries[key] = Entry{trim(std::string_view(body).substr(eq + 1)), line_no};
  }
  return doc;
}

bool IniDocument::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.contains(key);
}

const IniDocument::Entry* IniDocument::find(const std::string& section, const std::string& key) {
  auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  auto k = s->second.find(key);
  if (k == s->second.end()) return nullptr;
  used_.insert({section, key});
  return &k->second;
}

std::optional<std::string> IniDocument::raw(const std::string& section, const std::string& key) {
  if (const Entry* e = find(section, key)) return e->value;
  return std::nullopt;
}

std::string IniDocument::get_string(const std::string& section, const std::string& key, const std::string& fallback) {
  const Entry* e = find(section, key);
  return e ? e->value : fallback;
}

double IniDocument::get_double(const std::string& section, const std::string& key, double fallback) {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  try {
    return parse_double(e->value);
  } catch (const ConfigError&) {
    throw FormatError(section + "." + key + ": expected a number, got '" + e->value + "'", e->line);
  }
}

std::size_t IniDocument::get_size(const std::string& section, const std::string& key, std::size_t fallback) {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
  if (ec != std::errc{} || ptr != e->value.data() + e->value.size())
    throw FormatError(section + "." + key + ": expected a nonnegative integer, got '" + e->value + "'", e->line);
  return v;
}

bool IniDocument::get_bool(const std::string& section, const std::string& key, bool fallback) {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no") return false;
  throw FormatError(section + "." + key + ": expected true or false", e->line);
}

std::vector<std::string> IniDocument::get_list(const std::string& section, const std::string& key,
                                               const std::vector<std::string>& fallback) {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  auto items = split_list(e->value);
  if (items.empty()) throw FormatError(section + "." + key + ": empty list", e->line);
  return items;
}

std::vector<double> IniDocument::get_doubles(const std::string& section, const std::string& key,
                                             const std::vector<double>& fallback) {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(e->value)) {
    try {
      out.push_back(parse_double(item));
    } catch (const ConfigError&) {
      throw FormatError(section + "." + key + ": '" + item + "' is not a number", e->line);
    }
  }
  if (out.empty()) throw FormatError(section + "." + key + ": empty list", e->line);
  return out;
}

std::vector<std::size_t> IniDocument::get_sizes(const std::string& section, const std::string& key,
                                                const std::vector<std::size_t>& fallback) {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::vector<std::size_t> out;
  for (const auto& item : split_list(e->value)) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size())
      throw FormatError(section + "." + key + ": '" + item + "' is not a nonnegative integer", e->line);
    out.push_back(v);
  }
  if (out.empty()) throw FormatError(section + "." + key + ": empty list", e->line);
  return out;
}

void IniDocument::finish() const {
  for (const auto& [section, entries] : sections_)
    for (const auto& [key, entry] : entries)
      if (!used_.contains({section, key})) throw FormatError("unknown key '" + key + "' in [" + section + "]", entry.line);
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace cst

#pragma once

// Declarative key-value documents shared by engine configs and occupant
// scenarios:
//
//   # comment
//   filter.window = 100
//   [occupant]
//   duration_ms = 600000
//
// Sections may repeat; entries before the first header live in an unnamed
// section.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "heartsway/types.hpp"

namespace heartsway::kv {

struct Entry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

class Section {
 public:
  std::string name;
  std::size_t line = 0;
  std::vector<Entry> entries;

  const Entry* find(const std::string& key) const;
  bool has(const std::string& key) const { return find(key) != nullptr; }

  // Typed accessors throw Error(ParseError) naming the key and line.
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::int64_t> get_int_list(const std::string& key) const;

  /// Keys present that are not in `known`, for unknown-field diagnostics.
  std::vector<Entry> unknown_keys(const std::vector<std::string>& known) const;
};

struct Document {
  std::vector<Section> sections;

  const Section& root() const { return sections.front(); }
  std::vector<const Section*> named(const std::string& name) const;
};

/// Throws Error(ParseError) with "line N: ..." on malformed input.
Document parse(const std::string& text);
Document parse_file(const std::string& path);

double to_double(const std::string& text, const std::string& what);
std::int64_t to_int(const std::string& text, const std::string& what);
bool to_bool(const std::string& text, const std::string& what);

std::string trim(std::string_view s);

}  // namespace heartsway::kv

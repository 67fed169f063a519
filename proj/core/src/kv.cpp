#include "heartsway/kv.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "heartsway/error.hpp"

namespace heartsway::kv {

std::string trim(std::string_view s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  const auto b = std::find_if(s.begin(), s.end(), not_space);
  const auto e = std::find_if(s.rbegin(), s.rend(), not_space).base();
  return b < e ? std::string(b, e) : std::string();
}

double to_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ParseError, what + ": expected a number, got '" + text + "'");
}

std::int64_t to_int(const std::string& text, const std::string& what) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::ParseError, what + ": expected an integer, got '" + text + "'");
  }
  return v;
}

bool to_bool(const std::string& text, const std::string& what) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
  if (t == "false" || t == "no" || t == "off" || t == "0") return false;
  throw Error(ErrorCode::ParseError, what + ": expected true/false, got '" + text + "'");
}

const Entry* Section::find(const std::string& key) const {
  // Last assignment wins.
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->key == key) return &*it;
  }
  return nullptr;
}

namespace {

std::string where(const Entry& e) { return "line " + std::to_string(e.line) + ": " + e.key; }

}  // namespace

std::string Section::get_string(const std::string& key, const std::string& fallback) const {
  const auto* e = find(key);
  return e ? e->value : fallback;
}

double Section::get_double(const std::string& key, double fallback) const {
  const auto* e = find(key);
  return e ? to_double(e->value, where(*e)) : fallback;
}

std::int64_t Section::get_int(const std::string& key, std::int64_t fallback) const {
  const auto* e = find(key);
  return e ? to_int(e->value, where(*e)) : fallback;
}

bool Section::get_bool(const std::string& key, bool fallback) const {
  const auto* e = find(key);
  return e ? to_bool(e->value, where(*e)) : fallback;
}

std::vector<std::int64_t> Section::get_int_list(const std::string& key) const {
  std::vector<std::int64_t> out;
  const auto* e = find(key);
  if (!e) return out;
  std::stringstream ss(e->value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(to_int(item, where(*e)));
  }
  return out;
}

std::vector<Entry> Section::unknown_keys(const std::vector<std::string>& known) const {
  std::vector<Entry> out;
  for (const auto& e : entries) {
    if (std::find(known.begin(), known.end(), e.key) == known.end()) out.push_back(e);
  }
  return out;
}

std::vector<const Section*> Document::named(const std::string& name) const {
  std::vector<const Section*> out;
  for (const auto& s : sections) {
    if (s.name == name) out.push_back(&s);
  }
  return out;
}

Document parse(const std::string& text) {
  Document doc;
  doc.sections.push_back(Section{});
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": malformed section header");
      }
      Section s;
      s.name = trim(std::string_view(line).substr(1, line.size() - 2));
      s.line = line_no;
      doc.sections.push_back(std::move(s));
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected key = value");
    }
    Entry e{trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)), line_no};
    if (e.key.empty()) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": empty key");
    }
    doc.sections.back().entries.push_back(std::move(e));
  }
  return doc;
}

Document parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace heartsway::kv

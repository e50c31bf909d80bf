#pragma once

// Minimal TOML-subset reader for scenario files: single-level [section]
// headers, `key = value` pairs, values restricted to strings, integers,
// floats, booleans and flat arrays of those. Comments start with '#'.
// Parsed entries are flattened to "section.key".

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace indexflow::lab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace toml {

struct Value {
  enum class Type { integer, floating, boolean, string, array };
  Type type = Type::integer;
  long long i = 0;
  double d = 0.0;
  bool b = false;
  std::string s;
  std::vector<Value> arr;

  double as_number() const {
    if (type == Type::integer) return static_cast<double>(i);
    if (type == Type::floating) return d;
    throw ConfigError("config: expected a number");
  }
};

class Table {
 public:
  std::map<std::string, Value> entries;

  bool has(const std::string& key) const { return entries.count(key) != 0; }

  const Value& at(const std::string& key) const {
    auto it = entries.find(key);
    if (it == entries.end()) throw ConfigError("config: missing key '" + key + "'");
    return it->second;
  }

  double number(const std::string& key) const { return at(key).as_number(); }

  double number_or(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  long long integer(const std::string& key) const {
    const Value& v = at(key);
    if (v.type != Value::Type::integer)
      throw ConfigError("config: key '" + key + "' must be an integer");
    return v.i;
  }

  long long integer_or(const std::string& key, long long fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  std::string str(const std::string& key) const {
    const Value& v = at(key);
    if (v.type != Value::Type::string)
      throw ConfigError("config: key '" + key + "' must be a string");
    return v.s;
  }

  std::string str_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? str(key) : fallback;
  }

  std::vector<double> number_array(const std::string& key) const {
    const Value& v = at(key);
    if (v.type != Value::Type::array)
      throw ConfigError("config: key '" + key + "' must be an array");
    std::vector<double> out;
    out.reserve(v.arr.size());
    for (const Value& e : v.arr) out.push_back(e.as_number());
    return out;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips a trailing comment, respecting quoted strings.
inline std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

inline bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
      return false;
  return true;
}

inline Value parse_scalar(const std::string& raw, int line_no) {
  const std::string s = trim(raw);
  if (s.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty value");
  Value v;
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"')
      throw ConfigError("config line " + std::to_string(line_no) + ": unterminated string");
    v.type = Value::Type::string;
    v.s = s.substr(1, s.size() - 2);
    return v;
  }
  if (s == "true" || s == "false") {
    v.type = Value::Type::boolean;
    v.b = (s == "true");
    return v;
  }
  // Integer when it parses fully without '.', 'e', 'inf', 'nan'.
  if (s.find_first_of(".eEnN") == std::string::npos) {
    std::size_t pos = 0;
    try {
      const long long i = std::stoll(s, &pos);
      if (pos == s.size()) {
        v.type = Value::Type::integer;
        v.i = i;
        return v;
      }
    } catch (...) {
    }
  }
  {
    std::size_t pos = 0;
    try {
      const double d = std::stod(s, &pos);
      if (pos == s.size()) {
        v.type = Value::Type::floating;
        v.d = d;
        return v;
      }
    } catch (...) {
    }
  }
  throw ConfigError("config line " + std::to_string(line_no) + ": cannot parse value '" + s + "'");
}

inline Value parse_value(const std::string& raw, int line_no) {
  const std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']')
      throw ConfigError("config line " + std::to_string(line_no) + ": unterminated array");
    Value v;
    v.type = Value::Type::array;
    const std::string inner = s.substr(1, s.size() - 2);
    std::string cur;
    bool in_str = false;
    for (char c : inner) {
      if (c == '"') in_str = !in_str;
      if (c == ',' && !in_str) {
        v.arr.push_back(parse_scalar(cur, line_no));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) v.arr.push_back(parse_scalar(cur, line_no));
    return v;
  }
  return parse_scalar(s, line_no);
}

}  // namespace detail

inline Table parse_string(const std::string& text) {
  Table table;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (!detail::valid_key(section))
        throw ConfigError("config line " + std::to_string(line_no) + ": bad section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (!detail::valid_key(key))
      throw ConfigError("config line " + std::to_string(line_no) + ": bad key '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.entries.count(full))
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + full + "'");
    table.entries[full] = detail::parse_value(line.substr(eq + 1), line_no);
  }
  return table;
}

inline Table parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

}  // namespace toml
}  // namespace indexflow::lab

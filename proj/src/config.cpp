#include "cat/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cat/tensor.hpp"

namespace cat {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> split_char(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

Config Config::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_text(ss.str(), path);
}

Config Config::parse_text(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw IoError("config: " + origin + ":" + std::to_string(lineno) +
                    ": expected 'key = value', got '" + t + "'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw IoError("config: " + origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.entries_.emplace_back(key, value);
  }
  return cfg;
}

bool Config::has(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return true;
  return false;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  const std::string* found = nullptr;
  for (const auto& [k, v] : entries_)
    if (k == key) found = &v;
  return found ? *found : fallback;
}

std::string Config::require(const std::string& key) const {
  if (!has(key)) throw IoError("config: missing required key '" + key + "'");
  return get(key, "");
}

std::vector<std::string> Config::all(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_)
    if (k == key) out.push_back(v);
  return out;
}

double Config::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw IoError("config: key '" + key + "' is not a number: '" + v + "'");
  }
}

int Config::get_int(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  try {
    size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(d);
  } catch (const std::exception&) {
    throw IoError("config: key '" + key + "' is not an integer: '" + v + "'");
  }
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  try {
    size_t pos = 0;
    std::uint64_t d = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw IoError("config: key '" + key + "' is not an unsigned integer: '" + v + "'");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = get(key, "");
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw IoError("config: key '" + key + "' is not a boolean: '" + v + "'");
}

void Config::set(const std::string& key, const std::string& value) {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
    if (it->first == key) {
      it->second = value;
      return;
    }
  entries_.emplace_back(key, value);
}

}  // namespace cat

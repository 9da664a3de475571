#ifndef CAT_CONFIG_HPP
#define CAT_CONFIG_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cat {

// Flat `key = value` text configuration. Lines starting with '#' and blank
// lines are ignored. Keys may repeat; get() returns the last occurrence and
// all() the full list, in file order.
class Config {
 public:
  static Config load(const std::string& path);
  static Config parse_text(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  std::vector<std::string> all(const std::string& key) const;

  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Appends or replaces the last occurrence; used for CLI overrides.
  void set(const std::string& key, const std::string& value);

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string trim(const std::string& s);
std::vector<std::string> split_ws(const std::string& s);
std::vector<std::string> split_char(const std::string& s, char sep);

}  // namespace cat

#endif

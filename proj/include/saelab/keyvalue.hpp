#pragma once

#include <algorithm>
#include <charconv>
#include <initializer_list>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "saelab/error.hpp"

namespace saelab {

// Flat `key=value` text records. Blank lines and lines starting with '#' are
// ignored; surrounding whitespace is trimmed.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& origin = "<stream>") {
    KeyValues kv;
    kv.origin_ = origin;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto text = trim(line);
      if (text.empty() || text.front() == '#') continue;
      const auto eq = text.find('=');
      if (eq == std::string_view::npos) {
        fail(ErrorCode::FormatError,
             origin + ":" + std::to_string(line_no) + ": expected key=value");
      }
      kv.values_[std::string(trim(text.substr(0, eq)))] = std::string(trim(text.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorCode::FormatError, origin_ + ": missing field '" + key + "'");
    return it->second;
  }

  template <typename T>
  T number(const std::string& key) const {
    const std::string& text = get(key);
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) {
      fail(ErrorCode::FormatError, origin_ + ": field '" + key + "' is not a number");
    }
    return value;
  }

  template <typename T>
  void read_into(const std::string& key, T& target) const {
    if (has(key)) target = number<T>(key);
  }

  // Throws InvalidConfig for any key not in `known`.
  void reject_unknown(std::initializer_list<std::string_view> known,
                      const std::string& what) const {
    for (const auto& [key, value] : values_) {
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        fail(ErrorCode::InvalidConfig, "unknown " + what + " '" + key + "'");
      }
    }
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  static std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
  }

  std::map<std::string, std::string> values_;
  std::string origin_;
};

}  // namespace saelab

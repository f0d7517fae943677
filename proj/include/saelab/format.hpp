#pragma once

#include <charconv>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "saelab/error.hpp"

namespace saelab {

// Shortest decimal text that parses back to the same value.
template <typename T>
std::string format_number(T value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

template <typename T>
std::string join_numbers(std::span<const T> values, char sep = ' ') {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out.push_back(sep);
    out += format_number(values[i]);
  }
  return out;
}

template <typename T>
std::vector<T> split_numbers(const std::string& text, const std::string& what) {
  std::vector<T> out;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    while (p < end && (*p == ' ' || *p == '\t' || *p == ',')) ++p;
    if (p == end) break;
    T value{};
    const auto [next, ec] = std::from_chars(p, end, value);
    if (ec != std::errc()) fail(ErrorCode::FormatError, what + ": malformed number list");
    out.push_back(value);
    p = next;
  }
  return out;
}

}  // namespace saelab

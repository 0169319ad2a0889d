#pragma once

#include <charconv>
#include <string>
#include <system_error>
#include <vector>

namespace hpa {

/// Shortest round-trip decimal text for a double.
inline std::string fmt_num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc{}) return "nan";
  return std::string(buf, res.ptr);
}

inline std::string fmt_vec(const std::vector<double>& v, const char* sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += fmt_num(v[i]);
  }
  return out;
}

}  // namespace hpa

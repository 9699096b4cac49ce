#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace foe {

// Base error for all library failures.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user input: configs, shapes, file contents. CLI maps this to exit 1.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf or a failed numerical check. CLI maps this to exit 2.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

namespace detail {
inline void str_cat(std::ostringstream&) {}
template <class T, class... Rest>
void str_cat(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  str_cat(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string str(const Args&... args) {
  std::ostringstream os;
  detail::str_cat(os, args...);
  return os.str();
}

}  // namespace foe

#define FOE_CHECK(cond, ...)                               \
  do {                                                     \
    if (!(cond)) throw ::foe::ValidationError(::foe::str(__VA_ARGS__)); \
  } while (0)

#define FOE_NUMERIC_CHECK(cond, ...)                       \
  do {                                                     \
    if (!(cond)) throw ::foe::NumericError(::foe::str(__VA_ARGS__)); \
  } while (0)

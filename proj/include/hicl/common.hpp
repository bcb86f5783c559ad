#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace hicl {

// Error taxonomy used across the library. The CLI maps these onto
// distinct exit codes (usage=2, data=3, numeric=4).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DataError(msg);
}

inline void require_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

// No NaN/Inf may enter or leave a kernel operation.
inline void assert_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
}

inline void assert_finite(const std::vector<double>& xs, const char* what) {
  for (double x : xs) assert_finite(x, what);
}

}  // namespace hicl

#pragma once

#include <stdexcept>
#include <string>

namespace dyn {

// Error classes map 1:1 onto CLI exit codes: usage 2, data 3, numeric 4.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

inline void require_data(bool cond, const std::string& msg) {
  if (!cond) throw DataError(msg);
}

}  // namespace dyn

#pragma once

#include <stdexcept>
#include <string>

namespace mavfl {

/// A position was queried outside the covered road segment.
class OutOfSegmentError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A hard constraint of the selection problem was violated (e.g. the
/// per-vehicle bandwidth floor).
class ConstraintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Local training produced a non-finite gradient or model.
class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mavfl

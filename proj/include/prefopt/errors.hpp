#pragma once

/**
 * errors.hpp - Exception taxonomy for the prefopt library
 *
 * Every error thrown by the library derives from prefopt::error so callers
 * can catch one base type. Messages are prefixed with the operation that
 * failed, e.g. "kl_divergence: ...".
 */

#include <stdexcept>
#include <string>

namespace prefopt {

/** Base class for all library errors. */
struct error : std::runtime_error {
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

/** Malformed arguments: shape mismatches, bad ranges, invalid enums. */
struct invalid_input_error : error {
  explicit invalid_input_error(const std::string& what) : error(what) {}
};

/** A probability required to be positive (or above the support floor) was not. */
struct support_violation_error : error {
  explicit support_violation_error(const std::string& what) : error(what) {}
};

/** A generated verification instance cannot exercise the requested check. */
struct invalid_instance_error : error {
  explicit invalid_instance_error(const std::string& what) : error(what) {}
};

/** A dataset construction could not satisfy its declared orderings. */
struct construction_error : error {
  explicit construction_error(const std::string& what) : error(what) {}
};

/** Throws invalid_input_error with `msg` unless `cond` holds. */
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw invalid_input_error(msg);
}

}  // namespace prefopt

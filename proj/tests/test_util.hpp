#pragma once

// Shared test helpers: the central finite-difference oracle used to verify
// every analytic gradient, and small instance builders.

#include <cmath>
#include <cstddef>
#include <functional>

#include <prefopt/core.hpp>

namespace testutil {

using prefopt::Matrix;
using prefopt::TabularPolicy;

/**
 * Central finite differences of a scalar loss with respect to every logit:
 * (f(z + h e) - f(z - h e)) / (2 h). Independent of any analytic gradient
 * code path; used as the ground-truth oracle.
 */
inline Matrix finite_difference_gradient(const TabularPolicy& policy,
                                         const std::function<double(const TabularPolicy&)>& loss,
                                         double step = 1e-5) {
  Matrix g(policy.prompts(), policy.responses());
  TabularPolicy probe = policy;
  for (std::size_t x = 0; x < policy.prompts(); ++x)
    for (std::size_t y = 0; y < policy.responses(); ++y) {
      const double original = probe.logits(x, y);
      probe.logits(x, y) = original + step;
      const double up = loss(probe);
      probe.logits(x, y) = original - step;
      const double down = loss(probe);
      probe.logits(x, y) = original;
      g(x, y) = (up - down) / (2.0 * step);
    }
  return g;
}

/** Max-norm difference relative to the analytic gradient's max-norm. */
inline double gradient_relative_error(const Matrix& reference, const Matrix& candidate) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < reference.data.size(); ++i) {
    diff = std::max(diff, std::abs(reference.data[i] - candidate.data[i]));
    scale = std::max(scale, std::abs(candidate.data[i]));
  }
  return diff / std::max(scale, 1e-12);
}

}  // namespace testutil

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tale/tensor.hpp"

namespace tale {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  std::size_t n_coords = 0;
};

// Compares reverse-mode gradients against central finite differences.
//
// eval(true) must compute the loss, run backward, and flush gradients into the
// given params; eval(false) must compute the loss value only. The function is
// required to be deterministic: two value-only evaluations at the same point
// must agree bitwise, otherwise a DomainError is raised.
//
// Per coordinate the relative error is |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
GradCheckReport grad_check(const std::function<double(bool with_grad)>& eval,
                           const std::vector<Param*>& params, double eps = 1e-5);

}  // namespace tale

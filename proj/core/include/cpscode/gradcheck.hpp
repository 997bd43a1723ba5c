#pragma once
// Central finite-difference verification of analytic gradients.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cpscode/mini_plm.hpp"

namespace cpscode {

// Generic core: perturbs each coordinate by +-h, re-evaluates `loss`, and
// compares (f(x+h) - f(x-h)) / 2h against the supplied analytic gradient.
// Relative error uses max(|analytic|, |fd|, floor) as denominator so
// exactly-zero gradients (e.g. unused embedding rows) do not divide by 0.
double max_relative_error(const std::function<double()>& loss,
                          std::span<double* const> coords,
                          std::span<const double> analytic, double h,
                          double floor = 1e-6);

struct GradCheckOptions {
  double h = 1e-5;  // must stay in [1e-5, 1e-3]
  size_t coords_per_tensor = 8;
  std::uint32_t seed = 0;
  // Only parameters whose name contains one of these substrings are
  // sampled; empty means all parameters.
  std::vector<std::string> name_filter;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  size_t coords_checked = 0;
  std::string worst_coordinate;
};

// Checks the model's analytic gradients for the masked-token loss on the
// given batch against central finite differences.
GradCheckReport gradient_check(MiniPlm& model, const BatchInput& batch,
                               const std::vector<MaskedToken>& targets,
                               const GradCheckOptions& options = {});

}  // namespace cpscode

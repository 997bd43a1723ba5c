#include "cpscode/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cpscode/error.hpp"

namespace cpscode {

double max_relative_error(const std::function<double()>& loss,
                          std::span<double* const> coords,
                          std::span<const double> analytic, double h,
                          double floor) {
  double worst = 0.0;
  for (size_t i = 0; i < coords.size(); ++i) {
    double* x = coords[i];
    const double saved = *x;
    *x = saved + h;
    const double up = loss();
    *x = saved - h;
    const double down = loss();
    *x = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      raise(ErrorCode::NonFiniteLoss, "loss not finite during perturbation");
    }
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(fd), floor});
    worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
  }
  return worst;
}

GradCheckReport gradient_check(MiniPlm& model, const BatchInput& batch,
                               const std::vector<MaskedToken>& targets,
                               const GradCheckOptions& options) {
  if (options.h < 1e-5 || options.h > 1e-3) {
    raise(ErrorCode::FractionInvalid, "step h must be in [1e-5, 1e-3]");
  }
  if (targets.empty()) {
    raise(ErrorCode::EmptyInput, "gradient check needs masked targets");
  }

  NamedParams params = model.parameters();
  for (auto& [name, tensor] : params) {
    tensor->ensure_grad();
    tensor->zero_grad();
  }
  const double base = mlm_loss(model, batch, targets, /*backprop=*/true);
  if (!std::isfinite(base)) {
    raise(ErrorCode::NonFiniteLoss, "base loss is not finite");
  }

  auto matches = [&options](const std::string& name) {
    if (options.name_filter.empty()) return true;
    return std::any_of(options.name_filter.begin(), options.name_filter.end(),
                       [&name](const std::string& part) {
                         return name.find(part) != std::string::npos;
                       });
  };

  std::mt19937 rng(options.seed);
  std::vector<double*> coords;
  std::vector<double> analytic;
  std::vector<std::string> names;
  for (auto& [name, tensor] : params) {
    if (!matches(name)) continue;
    std::uniform_int_distribution<size_t> pick(0, tensor->numel() - 1);
    for (size_t c = 0; c < std::min(options.coords_per_tensor, tensor->numel());
         ++c) {
      const size_t idx = pick(rng);
      coords.push_back(&tensor->v[idx]);
      analytic.push_back(tensor->g[idx]);
      names.push_back(name + "[" + std::to_string(idx) + "]");
    }
  }
  if (coords.empty()) {
    raise(ErrorCode::EmptyInput, "parameter subset matched nothing");
  }

  auto loss = [&model, &batch, &targets]() {
    return mlm_loss(model, batch, targets, /*backprop=*/false);
  };

  GradCheckReport report;
  report.coords_checked = coords.size();
  for (size_t i = 0; i < coords.size(); ++i) {
    const double err =
        max_relative_error(loss, std::span(&coords[i], 1),
                           std::span(&analytic[i], 1), options.h);
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_coordinate = names[i];
    }
  }
  for (auto& [name, tensor] : params) tensor->zero_grad();
  return report;
}

}  // namespace cpscode

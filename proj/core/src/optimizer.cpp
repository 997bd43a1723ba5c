#include "cpscode/optimizer.hpp"

#include <cmath>

#include "cpscode/error.hpp"

namespace cpscode {

void Adam::step(const NamedParams& params) {
  if (first_moment_.empty()) {
    first_moment_.resize(params.size());
    second_moment_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      first_moment_[i].assign(params[i].second->numel(), 0.0);
      second_moment_[i].assign(params[i].second->numel(), 0.0);
    }
  }
  if (first_moment_.size() != params.size()) {
    raise(ErrorCode::ShapeMismatch,
          "optimizer state tracks " + std::to_string(first_moment_.size()) +
              " tensors, got " + std::to_string(params.size()));
  }

  ++step_count_;
  const double bc1 =
      1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 =
      1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));

  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i].second;
    t.ensure_grad();
    if (first_moment_[i].size() != t.numel()) {
      raise(ErrorCode::ShapeMismatch,
            "parameter \"" + params[i].first + "\" changed shape");
    }
    if (!t.grad_finite()) {
      raise(ErrorCode::NonFiniteGradient,
            "non-finite gradient in \"" + params[i].first + "\"");
    }
    double* value = t.data();
    double* grad = t.grad();
    double* m = first_moment_[i].data();
    double* v = second_moment_[i].data();
    for (size_t j = 0; j < t.numel(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * grad[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * grad[j] * grad[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      value[j] -=
          config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
    if (!t.values_finite()) {
      raise(ErrorCode::NonFiniteGradient,
            "non-finite parameter after update in \"" + params[i].first +
                "\"");
    }
    t.zero_grad();
  }
}

}  // namespace cpscode

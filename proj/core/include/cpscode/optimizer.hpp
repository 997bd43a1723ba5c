#pragma once
// Adaptive-moment optimizer with bias correction.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cpscode/tensor.hpp"

namespace cpscode {

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Applies one update using each tensor's .g buffer and zeroes it.
  // Accumulators are allocated to match parameter shapes on first use;
  // a later shape change raises ShapeMismatch. Non-finite gradients and
  // non-finite post-update parameters are hard errors.
  void step(const NamedParams& params);

  size_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  AdamConfig config_;
  size_t step_count_ = 0;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
};

}  // namespace cpscode

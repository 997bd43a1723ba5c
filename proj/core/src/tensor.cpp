#include "cpscode/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cpscode {

Tensor Tensor::zeros(std::vector<size_t> shape) {
  Tensor t;
  t.shape = std::move(shape);
  size_t n = 1;
  for (size_t d : t.shape) n *= d;
  t.v.assign(n, 0.0);
  return t;
}

void Tensor::ensure_grad() {
  if (g.size() != v.size()) g.assign(v.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!g.empty()) std::fill(g.begin(), g.end(), 0.0);
}

bool Tensor::values_finite() const {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

bool Tensor::grad_finite() const {
  return std::all_of(g.begin(), g.end(),
                     [](double x) { return std::isfinite(x); });
}

void gemm_nn(double* c, const double* a, const double* b, size_t m, size_t k,
             size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt(double* c, const double* a, const double* b, size_t m, size_t k,
             size_t n, bool accumulate) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double sum = 0.0;
      for (size_t p = 0; p < k; ++p) sum += ai[p] * bj[p];
      if (accumulate) {
        ci[j] += sum;
      } else {
        ci[j] = sum;
      }
    }
  }
}

void gemm_tn(double* c, const double* a, const double* b, size_t m, size_t k,
             size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void softmax_rows(double* x, size_t m, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* row = x + i * n;
    const double mx = *std::max_element(row, row + n);
    double sum = 0.0;
    for (size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (size_t j = 0; j < n; ++j) row[j] *= inv;
  }
}

}  // namespace cpscode

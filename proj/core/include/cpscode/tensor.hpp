#pragma once
// Dense double tensors with an optional gradient buffer, plus the small
// GEMM kernels the model layers are built from.

#include <cstddef>
#include <string>
#include <vector>

namespace cpscode {

struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> v;  // values, row-major
  std::vector<double> g;  // gradient; empty until ensure_grad()

  Tensor() = default;
  static Tensor zeros(std::vector<size_t> shape);

  size_t numel() const { return v.size(); }
  size_t dim(size_t i) const { return shape.at(i); }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }
  double* grad() { return g.data(); }
  const double* grad() const { return g.data(); }

  void ensure_grad();
  void zero_grad();
  bool has_grad() const { return !g.empty(); }

  // Throws NonFiniteGradient/NonFiniteLoss-style errors via the caller;
  // returns false when any value is NaN or infinite.
  bool values_finite() const;
  bool grad_finite() const;
};

// C[M,N] (+)= A[M,K] * B[K,N]
void gemm_nn(double* c, const double* a, const double* b, size_t m, size_t k,
             size_t n, bool accumulate);
// C[M,N] (+)= A[M,K] * B[N,K]^T
void gemm_nt(double* c, const double* a, const double* b, size_t m, size_t k,
             size_t n, bool accumulate);
// C[M,N] (+)= A[K,M]^T * B[K,N]
void gemm_tn(double* c, const double* a, const double* b, size_t m, size_t k,
             size_t n, bool accumulate);

// In-place row softmax over an M x N matrix.
void softmax_rows(double* x, size_t m, size_t n);

}  // namespace cpscode

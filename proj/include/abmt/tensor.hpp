#pragma once

#include <cmath>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "abmt/common.hpp"

namespace abmt {

// Dense row-major tensor of 64-bit floats with explicit shapes. There is no
// implicit broadcasting; ops that batch over leading dimensions say so.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(numel_of(shape), 0.0);
  }
  Tensor(std::vector<int> s, std::vector<double> data)
      : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<std::size_t>(numel_of(shape)) != v.size())
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double value) {
    Tensor t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("Tensor: dims must be positive");
      n *= d;
    }
    return n;
  }

  long numel() const { return static_cast<long>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  // Product of all dims except the last; treats the tensor as [rows, cols].
  long rows() const { return numel() / cols(); }
  long cols() const { return shape.empty() ? 1 : shape.back(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// ---- Raw kernels ---------------------------------------------------------
// Shared by the tape ops and any inference-only path so both compute
// bit-identical results.
namespace kern {

// C[M,N] (+)= A[M,K] * B[K,N]
inline void matmul_nn(const double* a, const double* b, double* c, long m,
                      long k, long n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (long i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (long p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
inline void matmul_nt(const double* a, const double* b, double* c, long m,
                      long k, long n, bool accumulate) {
  for (long i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (long j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (long p = 0; p < k; ++p) acc += arow[p] * brow[p];
      if (accumulate)
        crow[j] += acc;
      else
        crow[j] = acc;
    }
  }
}

// C[K,N] (+)= A[M,K]^T * B[M,N]
inline void matmul_tn(const double* a, const double* b, double* c, long m,
                      long k, long n, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  for (long i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (long p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Softmax over `n` entries with a validity mask; masked entries get exactly
// zero weight. At least one entry must be valid.
inline void masked_softmax(const double* logits, const double* mask, double* out,
                           long n) {
  double mx = -1e300;
  bool any = false;
  for (long j = 0; j < n; ++j) {
    if (mask[j] != 0.0) {
      any = true;
      if (logits[j] > mx) mx = logits[j];
    }
  }
  if (!any) throw std::invalid_argument("masked_softmax: all entries masked");
  double denom = 0.0;
  for (long j = 0; j < n; ++j) {
    if (mask[j] != 0.0) {
      out[j] = std::exp(logits[j] - mx);
      denom += out[j];
    } else {
      out[j] = 0.0;
    }
  }
  const double inv = 1.0 / denom;
  for (long j = 0; j < n; ++j) out[j] *= inv;
}

}  // namespace kern

}  // namespace abmt

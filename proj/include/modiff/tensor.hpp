#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "modiff/errors.hpp"
#include "modiff/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary file formats assume a little-endian host");

namespace modiff {

// Dense row-major tensor of doubles with an optional same-shape gradient
// buffer. Values participating in a compute graph are never mutated in
// place; the graph allocates fresh outputs for every operation.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(std::accumulate(shape_.begin(), shape_.end(), std::size_t{1},
                              std::multiplies<>()),
              fill) {}

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor vector(std::size_t n, double fill = 0.0) {
    return Tensor({n}, fill);
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Tensor t({rows.size(), rows.begin()->size()});
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != t.cols()) throw DimensionError("ragged initializer");
      for (double v : row) t.data_[i++] = v;
    }
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t rows() const {
    return rank() == 1 ? 1 : shape_.at(0);
  }
  std::size_t cols() const {
    return rank() == 1 ? shape_.at(0) : shape_.at(rank() - 1);
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Gradient buffer, allocated on first use.
  bool has_grad() const { return !grad_.empty(); }
  std::vector<double>& grad() {
    if (grad_.empty()) grad_.assign(data_.size(), 0.0);
    return grad_;
  }
  const std::vector<double>& grad_view() const { return grad_; }
  void zero_grad() {
    if (!grad_.empty()) grad_.assign(grad_.size(), 0.0);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite())
    throw NumericError(std::string("non-finite value in ") + what);
}

inline void fill_normal(Tensor& t, Rng& rng) {
  for (double& v : t.values()) v = rng.normal();
}

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (double& v : t.values()) v = lo + (hi - lo) * rng.uniform();
}

namespace detail {

// Row-major kernels shared by the forward ops and the backward rules.
// C(m x n) += or = A(m x k) * B(k x n)
inline void mm_nn(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C(m x k) += A(m x n) * B(k x n)^T
inline void mm_nt_acc(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C(k x n) += A(m x k)^T * B(m x n)
inline void mm_tn_acc(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace detail

// Plain (non-recording) matrix product used by codec and sampler math.
inline Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("matmul_plain: inner dimensions do not match");
  Tensor c = Tensor::matrix(a.rows(), b.cols());
  detail::mm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(),
                false);
  return c;
}

inline Tensor transpose_plain(const Tensor& a) {
  Tensor t = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace modiff

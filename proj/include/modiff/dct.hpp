#pragma once

#include <map>
#include <mutex>
#include <utility>

#include "modiff/tensor.hpp"

namespace modiff {

// Orthonormal DCT-II basis truncated to its first `retained` rows.
// Row k, column n holds c_k * cos(pi * (2n+1) * k / (2 * full)), with
// c_0 = sqrt(1/full) and c_k = sqrt(2/full) otherwise, so that the full
// basis satisfies D * D^T = I and the inverse transform is the transpose.
struct DctBasis {
  std::size_t full = 0;      // H + F
  std::size_t retained = 0;  // L
  Tensor matrix;             // L x (H+F)
};

inline DctBasis dct_basis(std::size_t full, std::size_t retained) {
  if (retained < 1 || retained > full)
    throw DimensionError("dct_basis: retained rows out of range");
  DctBasis b{full, retained, Tensor::matrix(retained, full)};
  const double pi = 3.14159265358979323846;
  const double c0 = std::sqrt(1.0 / static_cast<double>(full));
  const double ck = std::sqrt(2.0 / static_cast<double>(full));
  for (std::size_t k = 0; k < retained; ++k) {
    const double scale = k == 0 ? c0 : ck;
    for (std::size_t n = 0; n < full; ++n)
      b.matrix(k, n) = scale * std::cos(pi * (2.0 * n + 1.0) * k /
                                        (2.0 * static_cast<double>(full)));
  }
  return b;
}

// Process-wide cache; bases are tiny (full <= a few hundred) but shared by
// every sampler chain and training step.
inline const DctBasis& dct_basis_cached(std::size_t full,
                                        std::size_t retained) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, std::size_t>, DctBasis> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(full, retained);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, dct_basis(full, retained)).first;
  return it->second;
}

// y = D x, mapping a (H+F) x 3J sequence to L x 3J coefficients.
inline Tensor dct_forward(const Tensor& x, const DctBasis& basis) {
  if (x.rows() != basis.full)
    throw DimensionError("dct_forward: sequence length != basis size");
  return matmul_plain(basis.matrix, x);
}

// x = D^T y; for L < H+F this is the least-squares reconstruction from the
// retained coefficients.
inline Tensor idct(const Tensor& y, const DctBasis& basis) {
  if (y.rows() != basis.retained)
    throw DimensionError("idct: coefficient rows != retained basis rows");
  return matmul_plain(transpose_plain(basis.matrix), y);
}

}  // namespace modiff

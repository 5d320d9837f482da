#pragma once

// Row-invariant matrix product. Every output element is accumulated as a
// chain of std::fma over k in ascending order, so a row's result does not
// depend on how many other rows are in the batch or which code path
// (blocked or remainder) produced it.

#include <cmath>
#include <cstddef>
#include <vector>

namespace jebgfn::nd::detail {

template <int R, int C>
inline void gemm_block(const double* a, std::size_t lda, const double* b, std::size_t ldb,
                       double* c, std::size_t ldc, std::size_t k_len) {
  double acc[R][C] = {};
  for (std::size_t k = 0; k < k_len; ++k) {
    const double* brow = b + k * ldb;
    for (int r = 0; r < R; ++r) {
      const double av = a[r * lda + k];
      for (int j = 0; j < C; ++j) acc[r][j] = std::fma(av, brow[j], acc[r][j]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < C; ++j) c[r * ldc + j] = acc[r][j];
}

template <int R>
inline void gemm_rows(const double* a, const double* b, double* c, std::size_t k_len,
                      std::size_t n) {
  std::size_t j = 0;
  for (; j + 24 <= n; j += 24) gemm_block<R, 24>(a, k_len, b + j, n, c + j, n, k_len);
  for (; j + 8 <= n; j += 8) gemm_block<R, 8>(a, k_len, b + j, n, c + j, n, k_len);
  for (; j < n; ++j) gemm_block<R, 1>(a, k_len, b + j, n, c + j, n, k_len);
}

/// c[m,n] = a[m,k] * b[k,n], all row-major and contiguous.
inline void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows<4>(a + i * k, b, c + i * n, k, n);
  for (; i < m; ++i) gemm_rows<1>(a + i * k, b, c + i * n, k, n);
}

inline std::vector<double> transpose(const double* a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

}  // namespace jebgfn::nd::detail

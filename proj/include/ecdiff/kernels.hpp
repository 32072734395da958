#pragma once

// Dense matrix-product kernels. `serial` is the reference implementation kept
// for testing; `parallel` splits output rows across OpenMP threads. Both visit
// the inner dimension in the same ascending order for every output entry, so
// their results are bitwise identical regardless of thread count.

#include <cstddef>

#include "ecdiff/matrix.hpp"

namespace ecdiff::kernels {

enum class Op { None, Transpose };

namespace detail {

template <typename T>
struct View {
  const T* p;
  std::size_t ld;
  bool trans;
  T at(std::size_t r, std::size_t c) const { return trans ? p[c * ld + r] : p[r * ld + c]; }
};

inline void check_dims(std::size_t a_rows, std::size_t a_cols, std::size_t b_rows,
                       std::size_t b_cols, std::size_t c_rows, std::size_t c_cols) {
  require_shape(a_cols == b_rows, "gemm: inner dimensions differ");
  require_shape(c_rows == a_rows && c_cols == b_cols, "gemm: output shape mismatch");
}

// C[i, :] (+)= sum_k op(A)[i, k] * op(B)[k, :] for one row i.
template <typename T>
inline void gemm_row(std::size_t i, std::size_t k_dim, std::size_t n, View<T> a, View<T> b, T* c_row,
                     bool accumulate) {
  if (!accumulate)
    for (std::size_t j = 0; j < n; ++j) c_row[j] = T(0);
  if (!b.trans) {
    for (std::size_t k = 0; k < k_dim; ++k) {
      const T aik = a.at(i, k);
      const T* b_row = b.p + k * b.ld;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += aik * b_row[j];
    }
  } else {
    for (std::size_t k = 0; k < k_dim; ++k) {
      const T aik = a.at(i, k);
      for (std::size_t j = 0; j < n; ++j) c_row[j] += aik * b.p[j * b.ld + k];
    }
  }
}

}  // namespace detail

namespace serial {

/// C = op(A) * op(B), or C += op(A) * op(B) when `accumulate` is set.
template <typename T>
void gemm(const Matrix<T>& A, Op opa, const Matrix<T>& B, Op opb, Matrix<T>& C, bool accumulate = false) {
  const bool ta = opa == Op::Transpose, tb = opb == Op::Transpose;
  const std::size_t m = ta ? A.cols() : A.rows();
  const std::size_t k = ta ? A.rows() : A.cols();
  const std::size_t kb = tb ? B.cols() : B.rows();
  const std::size_t n = tb ? B.rows() : B.cols();
  detail::check_dims(m, k, kb, n, C.rows(), C.cols());
  detail::View<T> a{A.data(), A.cols(), ta}, b{B.data(), B.cols(), tb};
  for (std::size_t i = 0; i < m; ++i) detail::gemm_row(i, k, n, a, b, C.data() + i * n, accumulate);
}

}  // namespace serial

namespace parallel {

/// Work (m*n*k multiply-adds) below which the parallel kernel stays on one thread.
inline constexpr std::size_t kMinParallelWork = 1u << 15;

template <typename T>
void gemm(const Matrix<T>& A, Op opa, const Matrix<T>& B, Op opb, Matrix<T>& C, bool accumulate = false) {
  const bool ta = opa == Op::Transpose, tb = opb == Op::Transpose;
  const std::size_t m = ta ? A.cols() : A.rows();
  const std::size_t k = ta ? A.rows() : A.cols();
  const std::size_t kb = tb ? B.cols() : B.rows();
  const std::size_t n = tb ? B.rows() : B.cols();
  detail::check_dims(m, k, kb, n, C.rows(), C.cols());
  detail::View<T> a{A.data(), A.cols(), ta}, b{B.data(), B.cols(), tb};
  T* c = C.data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kMinParallelWork)
  for (long long i = 0; i < rows; ++i) {
    detail::gemm_row(static_cast<std::size_t>(i), k, n, a, b, c + static_cast<std::size_t>(i) * n, accumulate);
  }
}

}  // namespace parallel

template <typename T>
Matrix<T> matmul(const Matrix<T>& A, const Matrix<T>& B) {
  Matrix<T> C(A.rows(), B.cols());
  parallel::gemm(A, Op::None, B, Op::None, C);
  return C;
}

}  // namespace ecdiff::kernels

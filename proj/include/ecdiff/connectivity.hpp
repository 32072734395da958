#pragma once

#include "ecdiff/matrix.hpp"

namespace ecdiff {

/// Symmetric nonnegative structural adjacency and its self-looped,
/// symmetrically normalized propagation matrix D^-1/2 (G + I) D^-1/2.
class StructuralConnectivity {
 public:
  /// Validates symmetry (1e-9) and nonnegativity of `adjacency`.
  explicit StructuralConnectivity(MatrixD adjacency);

  std::size_t size() const { return adjacency_.rows(); }
  const MatrixD& adjacency() const { return adjacency_; }
  const MatrixD& propagation() const { return propagation_; }

  template <typename T>
  Matrix<T> propagation_as() const {
    return propagation_.cast<T>();
  }

 private:
  MatrixD adjacency_;
  MatrixD propagation_;
};

/// Conjugates a square matrix by a permutation: out(p[i], p[j]) = m(i, j).
MatrixD permute_square(const MatrixD& m, const std::vector<std::size_t>& perm);
/// Moves row i of `m` to row perm[i].
template <typename T>
Matrix<T> permute_rows(const Matrix<T>& m, const std::vector<std::size_t>& perm) {
  Matrix<T> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) out(perm[i], c) = m(i, c);
  return out;
}

}  // namespace ecdiff

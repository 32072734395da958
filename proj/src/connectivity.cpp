#include "ecdiff/connectivity.hpp"

#include <cmath>
#include <stdexcept>

namespace ecdiff {

StructuralConnectivity::StructuralConnectivity(MatrixD adjacency) : adjacency_(std::move(adjacency)) {
  const std::size_t n = adjacency_.rows();
  require_shape(n > 0 && adjacency_.cols() == n,
                "structural connectivity must be square, got " + adjacency_.shape_str());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = adjacency_(i, j);
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument("structural connectivity entries must be finite and nonnegative");
      if (std::abs(v - adjacency_(j, i)) > 1e-9)
        throw std::invalid_argument("structural connectivity is not symmetric at (" + std::to_string(i + 1) + "," +
                                    std::to_string(j + 1) + ")");
    }
  }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 1.0;
    for (std::size_t j = 0; j < n; ++j) deg += adjacency_(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  propagation_ = MatrixD(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      propagation_(i, j) = inv_sqrt_deg[i] * (adjacency_(i, j) + (i == j ? 1.0 : 0.0)) * inv_sqrt_deg[j];
}

MatrixD permute_square(const MatrixD& m, const std::vector<std::size_t>& perm) {
  MatrixD out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(perm[i], perm[j]) = m(i, j);
  return out;
}

}  // namespace ecdiff

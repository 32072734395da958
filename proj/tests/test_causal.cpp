#include <gtest/gtest.h>

#include <cmath>

#include "ecdiff/causal.hpp"
#include "ecdiff/connectivity.hpp"
#include "reference_ops.hpp"
#include "test_util.hpp"

using namespace ecdiff;
using namespace ecdiff::testing;

namespace {

ModelParams<double> causal_params(std::size_t q, std::uint64_t seed) {
  ModelParams<double> p;
  register_causal_params(p, q);
  initialize_params(p, seed);
  return p;
}

TEST(EstimateCausal, ZeroBilinearGivesZeroMatrix) {
  auto p = causal_params(4, 1);
  p.at("causal.bilinear").value.fill(0);
  const auto out = estimate_causal(random_matrix(5, 4, 2), random_matrix(5, 4, 3), p);
  EXPECT_EQ(out.ec, MatrixD(5, 5));
}

TEST(EstimateCausal, DiagonalIsExactlyZero) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = causal_params(6, seed);
    const auto out = estimate_causal(random_matrix(7, 6, seed + 10), random_matrix(7, 6, seed + 20), p);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(out.ec(i, i), 0.0);
    EXPECT_TRUE(out.ec.all_finite());
  }
}

TEST(EstimateCausal, ThreeRoiHandOracle) {
  auto p = causal_params(2, 1);
  p.at("causal.fc1.w").value = random_matrix(4, 2, 5);
  p.at("causal.fc1.b").value = random_matrix(1, 2, 6);
  p.at("causal.fc2.w").value = random_matrix(2, 2, 7);
  p.at("causal.fc2.b").value = random_matrix(1, 2, 8);
  p.at("causal.bilinear").value = MatrixD{{1.0, 2.0}, {-0.5, 0.25}};
  const MatrixD h = random_matrix(3, 2, 9), e = random_matrix(3, 2, 10);
  const auto out = estimate_causal(h, e, p);

  MatrixD cat(3, 4);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      cat(i, c) = h(i, c);
      cat(i, 2 + c) = e(i, c);
    }
  const MatrixD s = ref_linear(ref_relu(ref_linear(cat, p.at("causal.fc1.w").value, p.at("causal.fc1.b").value)),
                               p.at("causal.fc2.w").value, p.at("causal.fc2.b").value);
  EXPECT_LE(max_abs_diff(out.features, s), 1e-14);
  const MatrixD& w = p.at("causal.bilinear").value;
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 3; ++i) {
      double v = 0;
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) v += s(j, a) * w(a, b) * s(i, b);
      EXPECT_NEAR(out.ec(j, i), i == j ? 0.0 : v / std::sqrt(2.0), 1e-14) << j << "," << i;
    }
}

TEST(EstimateCausal, RejectsShapeMismatch) {
  const auto p = causal_params(4, 1);
  EXPECT_THROW(estimate_causal(MatrixD(3, 4), MatrixD(3, 5), p), ShapeError);
  EXPECT_THROW(estimate_causal(MatrixD(3, 5), MatrixD(3, 5), p), ShapeError);
}

TEST(EstimateCausal, RoiPermutationConjugatesEc) {
  const auto p = causal_params(5, 2);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const MatrixD h = random_matrix(4, 5, 3), e = random_matrix(4, 5, 4);
  const auto base = estimate_causal(h, e, p);
  const auto moved = estimate_causal(permute_rows(h, perm), permute_rows(e, perm), p);
  EXPECT_LE(max_abs_diff(moved.ec, permute_square(base.ec, perm)), 1e-14);
  EXPECT_LE(max_abs_diff(sem_reconstruct(moved.ec, moved.features),
                         permute_rows(sem_reconstruct(base.ec, base.features), perm)),
            1e-14);
}

TEST(SemReconstruct, ZeroEcGivesZero) {
  EXPECT_EQ(sem_reconstruct(MatrixD(3, 3), random_matrix(3, 4, 1)), MatrixD(3, 4));
}

TEST(SemReconstruct, SingleEdgeTransportsSourceRow) {
  // E(1, 0) = 1: region 1 drives region 0.
  MatrixD ec(3, 3);
  ec(1, 0) = 1;
  const MatrixD s = random_matrix(3, 4, 2);
  const MatrixD out = sem_reconstruct(ec, s);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(out(0, c), s(1, c));
    EXPECT_EQ(out(1, c), 0.0);
    EXPECT_EQ(out(2, c), 0.0);
  }
}

TEST(SemReconstruct, MatchesDoubleLoop) {
  const MatrixD ec = random_matrix(4, 4, 3), s = random_matrix(4, 3, 4);
  const MatrixD out = sem_reconstruct(ec, s);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      double v = 0;
      for (std::size_t j = 0; j < 4; ++j) v += ec(j, i) * s(j, c);
      EXPECT_NEAR(out(i, c), v, 1e-14);
    }
}

TEST(SemReconstruct, LinearInEachArgument) {
  const MatrixD e1 = random_matrix(4, 4, 5), e2 = random_matrix(4, 4, 6);
  const MatrixD s1 = random_matrix(4, 3, 7), s2 = random_matrix(4, 3, 8);
  const double a = 1.7, b = -0.4;
  EXPECT_LE(max_abs_diff(sem_reconstruct(e1, a * s1 + b * s2),
                         a * sem_reconstruct(e1, s1) + b * sem_reconstruct(e1, s2)),
            1e-13);
  EXPECT_LE(max_abs_diff(sem_reconstruct(a * e1 + b * e2, s1),
                         a * sem_reconstruct(e1, s1) + b * sem_reconstruct(e2, s1)),
            1e-13);
}

TEST(SemReconstruct, RejectsShapeMismatch) {
  EXPECT_THROW(sem_reconstruct(MatrixD(3, 3), MatrixD(4, 2)), ShapeError);
}

TEST(CausalGradient, DiagonalScoresReceiveNoGradient) {
  auto p = causal_params(3, 4);
  Graph<double> g;
  const auto out = estimate_causal(g, p, g.constant(random_matrix(4, 3, 1)), g.constant(random_matrix(4, 3, 2)));
  // A loss on the diagonal alone is constant, so the bilinear form gets no gradient.
  const auto loss = g.sum_abs(g.sub(out.ec, g.constant(MatrixD(4, 4))));
  g.backward(loss);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g.grad(out.ec)(i, i), 0.0);
}

}  // namespace

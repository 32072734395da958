#pragma once

// Synthetic cohorts with planted causal structure. Ground truth is a VAR(1)
// process x(k+1) = E^T x(k) + eta, so E(j, i) is the influence of region j on
// region i, matching the SEM convention of the causal readout.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ecdiff/connectivity.hpp"
#include "ecdiff/matrix.hpp"

namespace ecdiff {

enum class Stage { NC, SMC, EMCI, LMCI };

const char* to_string(Stage s);
Stage parse_stage(const std::string& s);
const std::vector<Stage>& all_stages();

struct Edge {
  std::size_t source;
  std::size_t target;
  friend bool operator==(const Edge&, const Edge&) = default;
};

struct StageTransition {
  Stage from;
  Stage to;
  std::vector<Edge> enhanced;    // scaled x1.5
  std::vector<Edge> diminished;  // scaled x0.5
};

/// Largest eigenvalue modulus.
double spectral_radius(const MatrixD& m);

/// Sparse zero-diagonal causal matrix: each off-diagonal entry is nonzero
/// with probability `density`, magnitude U[0.1, 0.5] with random sign,
/// rescaled to spectral radius 0.9 when initially larger.
MatrixD gen_causal_matrix(std::size_t n, double density, std::uint64_t seed);

/// Simulates q time points of the VAR(1) process after `burn_in` discarded
/// steps, then z-scores every row. Rejects spectral radius > 1.
MatrixD simulate_series(const MatrixD& ec, std::size_t q, double sigma, std::size_t burn_in, std::uint64_t seed);

struct RoughOptions {
  std::size_t smoothing_width = 1;  // odd boxcar width along time, reflect padding
  double jitter = 0.2;              // per-ROI gain ~ U(1 - jitter, 1 + jitter)
  double noise_sd = 0.05;
};

/// Models preprocessing error: boxcar smoothing, per-ROI multiplicative
/// jitter, and additive Gaussian noise.
MatrixD degrade_to_rough(const MatrixD& clean, std::uint64_t seed, const RoughOptions& opt = {});

struct SubjectRecord {
  std::string id;
  Stage stage;
  std::uint64_t seed;
  MatrixD clean;
  MatrixD rough;
  MatrixD ec_true;  // per-subject ground truth (stage matrix with weight jitter)
  std::shared_ptr<const StructuralConnectivity> sc;
};

struct CohortConfig {
  std::size_t n_rois = 90;
  std::size_t n_points = 187;
  std::size_t subjects_per_stage = 60;
  std::size_t perturbed_edges = 5;
  std::vector<Stage> stages = {Stage::NC, Stage::SMC, Stage::EMCI, Stage::LMCI};
  double density = 0.2;
  double sigma = 1.0;
  std::size_t burn_in = 100;
  double weight_jitter = 0.05;
  RoughOptions rough;
  std::uint64_t seed = 0;
};

struct Cohort {
  CohortConfig config;
  MatrixD base_ec;
  std::vector<MatrixD> stage_ec;  // parallel to config.stages
  std::shared_ptr<const StructuralConnectivity> sc;
  std::vector<StageTransition> transitions;
  std::vector<SubjectRecord> subjects;
};

/// Derives an independent child seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// One base matrix per cohort; every stage transition scales
/// `perturbed_edges` base edges by 1.5 and as many others by 0.5,
/// cumulatively. Perturbed edges are made positive so the planted change has
/// the sign of its label. All stage matrices are jointly rescaled to
/// spectral radius <= 0.9. Structure is the symmetrized |base| matrix.
Cohort build_cohort(const CohortConfig& cfg);

}  // namespace ecdiff

#pragma once

// Causal readout: per-ROI features from (noisy sample, noise estimate), a
// bilinear head producing the effective-connectivity matrix, and the linear
// structural equation model x'_i = sum_j E_ji s_j.
//
// Convention: E(j, i) is the causal weight of region j acting on region i.

#include <cstdint>

#include "ecdiff/autodiff.hpp"
#include "ecdiff/denoiser.hpp"
#include "ecdiff/matrix.hpp"
#include "ecdiff/params.hpp"

namespace ecdiff {

template <typename T>
struct CausalOutput {
  Var<T> ec;        // N x N, zero diagonal
  Var<T> features;  // N x q
};

/// Registers causal.fc1 (2q -> q), causal.fc2 (q -> q) and causal.bilinear (q x q).
template <typename T>
void register_causal_params(ModelParams<T>& params, std::size_t n_points);

template <typename T>
CausalOutput<T> estimate_causal(Graph<T>& g, const ModelParams<T>& params, Var<T> noisy, Var<T> eps_hat);

/// E^T * S: row i is the SEM reconstruction of region i.
template <typename T>
Var<T> sem_reconstruct(Graph<T>& g, Var<T> ec, Var<T> features);

template <typename T>
struct CausalEstimate {
  Matrix<T> ec;
  Matrix<T> features;
};

template <typename T>
CausalEstimate<T> estimate_causal(const Matrix<T>& noisy, const Matrix<T>& eps_hat, const ModelParams<T>& params);

template <typename T>
Matrix<T> sem_reconstruct(const Matrix<T>& ec, const Matrix<T>& features);

// ---- full model parameter set ----

/// Denoiser + causal-estimator arrays for `cfg`, initialized: weights
/// uniform in +-1/sqrt(fan_in), layer-norm gains 1, all biases 0.
template <typename T>
ModelParams<T> make_model_params(const DenoiserConfig& cfg, std::uint64_t seed);

/// Re-draws every array of `params` with the initialization law above.
template <typename T>
void initialize_params(ModelParams<T>& params, std::uint64_t seed);

}  // namespace ecdiff

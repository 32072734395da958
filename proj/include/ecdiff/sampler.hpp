#pragma once

// Conditioned reverse process over the coarse grid t_j = j * stride,
// j = coarse_steps .. 1, with t_0 = 0.

#include <cstdint>
#include <functional>
#include <vector>

#include "ecdiff/causal.hpp"
#include "ecdiff/connectivity.hpp"
#include "ecdiff/denoiser.hpp"
#include "ecdiff/diffusion.hpp"

namespace ecdiff {

template <typename T>
struct SampleStep {
  int t_from = 0;
  int t_to = 0;
  Matrix<T> sample;  // after the update, at t_to
  Matrix<T> ec;      // readout from the sample at t_from
};

template <typename T>
struct SampleResult {
  Matrix<T> clean;
  Matrix<T> ec;
  std::vector<SampleStep<T>> trace;  // filled only when requested
};

template <typename T>
using NoisePredictor = std::function<Matrix<T>(const Matrix<T>& noisy, int t)>;
template <typename T>
using CausalReadout = std::function<Matrix<T>(const Matrix<T>& noisy, const Matrix<T>& eps_hat, int t)>;

/// Coarse anchors from T down to 0: {T_n*m, (T_n-1)*m, ..., m, 0}.
std::vector<int> coarse_anchors(const DiffusionSchedule& sched);

/// Runs the deterministic reverse process from `start` using arbitrary noise
/// and causal estimators. `readout` may be empty.
template <typename T>
SampleResult<T> reverse_process(Matrix<T> start, const DiffusionSchedule& sched, const NoisePredictor<T>& predictor,
                                const CausalReadout<T>& readout, bool keep_trace);

/// Draws the initial sample from N(0, I) with `seed` and denoises it with the
/// trained network conditioned on `cond` and `sc`. Rejects non-finite params.
template <typename T>
SampleResult<T> sample(const Matrix<T>& cond, const StructuralConnectivity& sc, const ModelParams<T>& params,
                       const DenoiserConfig& cfg, const DiffusionSchedule& sched, std::uint64_t seed,
                       bool keep_trace = false);

}  // namespace ecdiff

#pragma once

// Variance schedules and the closed-form forward/reverse diffusion updates.
// Step indices are 1-based fine steps; alpha_hat(0) is defined as 1 so that an
// update landing on step 0 targets the clean sample exactly.

#include <cstddef>
#include <vector>

#include "ecdiff/matrix.hpp"

namespace ecdiff {

class DiffusionSchedule {
 public:
  DiffusionSchedule(std::vector<double> betas, int coarse_steps, int stride);

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  int coarse_steps() const noexcept { return coarse_steps_; }
  int stride() const noexcept { return stride_; }

  double beta(int t) const { return betas_.at(index(t)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  /// Cumulative product of alphas up to step t; 1 at t = 0.
  double alpha_hat(int t) const;

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alpha_hats() const noexcept { return alpha_hat_; }

 private:
  std::size_t index(int t) const;

  std::vector<double> betas_;
  std::vector<double> alpha_hat_;
  int coarse_steps_;
  int stride_;
};

/// Linear beta schedule from beta_start to beta_end inclusive over
/// `steps` = coarse_steps * stride fine steps.
DiffusionSchedule build_schedule(int steps, double beta_start, double beta_end, int coarse_steps, int stride);

/// Schedule used throughout the tools: 100 steps, 10 coarse steps of stride 10.
DiffusionSchedule default_schedule();

/// One Markov step: sqrt(1 - beta_t) * prev + sqrt(beta_t) * eps.
template <typename T>
Matrix<T> forward_step(const Matrix<T>& prev, int t, const Matrix<T>& eps, const DiffusionSchedule& sched);

/// Closed-form jump from the clean sample to step t (t = 0 returns clean).
template <typename T>
Matrix<T> q_sample(const Matrix<T>& clean, int t, const Matrix<T>& eps, const DiffusionSchedule& sched);

template <typename T>
struct PosteriorParams {
  Matrix<T> mean;
  double variance;
};

/// Mean and isotropic variance of the reverse transition at step t given a
/// noise estimate.
template <typename T>
PosteriorParams<T> posterior_params(const Matrix<T>& noisy, const Matrix<T>& eps_hat, int t,
                                    const DiffusionSchedule& sched);

/// Deterministic conditioned update from step t_cur to t_prev (< t_cur).
template <typename T>
Matrix<T> ddim_update(const Matrix<T>& noisy, const Matrix<T>& eps_hat, int t_cur, int t_prev,
                      const DiffusionSchedule& sched);

/// Coarse bucket of fine step i: min(floor(i / stride) + 1, coarse_steps).
int stride_map(int fine_step, int stride, int coarse_steps);

}  // namespace ecdiff

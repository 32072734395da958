#pragma once

// Training of the noise estimator and causal readout under the three-term
// objective (noise regression + SEM reconstruction + L1 sparsity on E), Adam
// updates, and a central-difference gradient checker.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecdiff/autodiff.hpp"
#include "ecdiff/causal.hpp"
#include "ecdiff/connectivity.hpp"
#include "ecdiff/denoiser.hpp"
#include "ecdiff/diffusion.hpp"
#include "ecdiff/params.hpp"

namespace ecdiff {

struct TrainConfig {
  int epochs = 800;
  double learning_rate = 1e-3;
  double omega = 2.5;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  Precision precision = Precision::F64;

  void validate() const;
};

template <typename T>
struct OptimizerState {
  std::vector<Matrix<T>> first_moment;
  std::vector<Matrix<T>> second_moment;
  std::int64_t step = 0;

  static OptimizerState zeros_like(const ModelParams<T>& params);
};

/// One Adam update of every array from its gradient buffer.
template <typename T>
void adam_step(ModelParams<T>& params, OptimizerState<T>& state, const TrainConfig& cfg);

/// A subject as seen by the trainer: clean sample, condition, structure.
template <typename T>
struct TrainingRecord {
  Matrix<T> clean;
  Matrix<T> cond;
  StructuralConnectivity sc;
};

struct LossParts {
  double noise = 0;
  double reconstruction = 0;
  double sparsity = 0;
  double total() const { return noise + reconstruction + sparsity; }
};

template <typename T>
struct LossGraph {
  Var<T> total;
  LossParts parts;
};

/// Records the objective for one (record, t, eps) draw on graph `g`.
template <typename T>
LossGraph<T> compute_loss(Graph<T>& g, const TrainingRecord<T>& rec, int t, const Matrix<T>& eps,
                          const ModelParams<T>& params, const DenoiserConfig& cfg, const DiffusionSchedule& sched,
                          double omega);

/// Loss value only.
template <typename T>
LossParts compute_loss(const TrainingRecord<T>& rec, int t, const Matrix<T>& eps, const ModelParams<T>& params,
                       const DenoiserConfig& cfg, const DiffusionSchedule& sched, double omega);

/// Loss value; gradients are added into the params' gradient buffers.
template <typename T>
LossParts loss_and_grad(const TrainingRecord<T>& rec, int t, const Matrix<T>& eps, ModelParams<T>& params,
                        const DenoiserConfig& cfg, const DiffusionSchedule& sched, double omega);

struct EpochStats {
  int epoch = 0;
  LossParts mean;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  OptimizerState<T> optimizer;
  std::vector<EpochStats> history;
};

/// Per-epoch callback, e.g. for progress logging.
using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains from fresh parameters initialized with tcfg.seed. One subject per
/// optimizer step; subjects are visited in a seeded shuffled order each epoch.
/// Throws NumericalError naming the offending array on a non-finite loss.
template <typename T>
TrainResult<T> train(const std::vector<TrainingRecord<T>>& dataset, const TrainConfig& tcfg,
                     const DenoiserConfig& mcfg, const DiffusionSchedule& sched, const EpochCallback& on_epoch = {});

/// Continues training from existing parameters and optimizer state.
template <typename T>
void train_in_place(ModelParams<T>& params, OptimizerState<T>& opt, std::vector<EpochStats>& history,
                    const std::vector<TrainingRecord<T>>& dataset, const TrainConfig& tcfg, const DenoiserConfig& mcfg,
                    const DiffusionSchedule& sched, const EpochCallback& on_epoch = {});

// ---- gradient verification ----

template <typename T>
struct GradientProbe {
  TrainingRecord<T> record;
  int t;
  Matrix<T> eps;
};

struct FiniteDiffOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double scale_floor = 1e-6;
  std::size_t entries_per_array = 8;
  std::uint64_t seed = 0;
  double omega = 2.5;
};

struct FiniteDiffArrayResult {
  std::string name;
  std::size_t entries_checked = 0;
  std::size_t entries_skipped = 0;  // at or near a kink, or noise-limited
  double max_rel_error = 0;
  double max_abs_analytic = 0;
  bool passed = true;
};

struct FiniteDiffReport {
  std::vector<FiniteDiffArrayResult> arrays;
  bool passed() const;
  std::vector<std::string> failing_arrays() const;
};

/// Compares analytic gradients to central differences for every array. The
/// differences are evaluated in extended precision so that the model is
/// judged against its exact loss rather than its own rounding. Entries at or near a non-differentiable
/// point are redrawn; an array passes when
/// `entries_per_array` smooth entries (or all of them) agree within tolerance.
/// `gradient_hook`, if set, may alter the analytic gradients before comparison.
template <typename T>
FiniteDiffReport finite_diff_check(
    ModelParams<T> params, const GradientProbe<T>& probe, const DenoiserConfig& cfg, const DiffusionSchedule& sched,
    const FiniteDiffOptions& opt, const std::function<void(ModelParams<T>&)>& gradient_hook = {});

}  // namespace ecdiff

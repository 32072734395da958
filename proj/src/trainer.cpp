#include "ecdiff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ecdiff {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train config: epochs must be nonnegative");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train config: learning_rate must be nonnegative");
  if (!(omega >= 0.0)) throw std::invalid_argument("train config: omega must be nonnegative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("train config: Adam betas must lie in [0,1)");
  if (!(adam_epsilon > 0.0)) throw std::invalid_argument("train config: adam_epsilon must be positive");
}

template <typename T>
OptimizerState<T> OptimizerState<T>::zeros_like(const ModelParams<T>& params) {
  OptimizerState s;
  for (const auto& a : params.arrays()) {
    s.first_moment.emplace_back(a.value.rows(), a.value.cols());
    s.second_moment.emplace_back(a.value.rows(), a.value.cols());
  }
  return s;
}

template <typename T>
void adam_step(ModelParams<T>& params, OptimizerState<T>& state, const TrainConfig& cfg) {
  if (state.first_moment.size() != params.size()) state = OptimizerState<T>::zeros_like(params);
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.adam_epsilon);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2), tc1 = static_cast<T>(c1), tc2 = static_cast<T>(c2);
  auto& arrays = params.arrays();
  for (std::size_t k = 0; k < arrays.size(); ++k) {
    auto& w = arrays[k].value;
    const auto& gr = arrays[k].grad;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = tb1 * m[i] + (T(1) - tb1) * gr[i];
      v[i] = tb2 * v[i] + (T(1) - tb2) * gr[i] * gr[i];
      const T mhat = m[i] / tc1;
      const T vhat = v[i] / tc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
LossGraph<T> compute_loss(Graph<T>& g, const TrainingRecord<T>& rec, int t, const Matrix<T>& eps,
                          const ModelParams<T>& params, const DenoiserConfig& cfg, const DiffusionSchedule& sched,
                          double omega) {
  require_shape(rec.clean.same_shape(eps), "compute_loss: noise " + eps.shape_str() + " vs sample " +
                                               rec.clean.shape_str());
  if (t < 1 || t > sched.steps()) throw std::out_of_range("compute_loss: step outside 1..T");
  Var<T> noisy = g.constant(q_sample(rec.clean, t, eps, sched));
  Var<T> target = g.constant(q_sample(rec.clean, t - 1, eps, sched));
  Var<T> eps_true = g.constant(eps);
  Var<T> prop = g.constant(rec.sc.template propagation_as<T>());
  Var<T> eps_hat = predict_noise(g, params, cfg, prop, noisy, t, g.constant(rec.cond));
  auto causal = estimate_causal(g, params, noisy, eps_hat);
  Var<T> recon = sem_reconstruct(g, causal.ec, causal.features);

  const double n = static_cast<double>(cfg.n_rois);
  Var<T> l_noise = g.mean_squared_error(eps_hat, eps_true);
  Var<T> l_recon = g.mean_squared_error(recon, target);
  Var<T> l_sparse = g.scale(g.sum_abs(causal.ec), static_cast<T>(omega / (n * n)));
  Var<T> total = g.add(g.add(l_noise, l_recon), l_sparse);
  LossParts parts{static_cast<double>(g.scalar(l_noise)), static_cast<double>(g.scalar(l_recon)),
                  static_cast<double>(g.scalar(l_sparse))};
  return {total, parts};
}

template <typename T>
LossParts compute_loss(const TrainingRecord<T>& rec, int t, const Matrix<T>& eps, const ModelParams<T>& params,
                       const DenoiserConfig& cfg, const DiffusionSchedule& sched, double omega) {
  Graph<T> g(false);
  return compute_loss(g, rec, t, eps, params, cfg, sched, omega).parts;
}

template <typename T>
LossParts loss_and_grad(const TrainingRecord<T>& rec, int t, const Matrix<T>& eps, ModelParams<T>& params,
                        const DenoiserConfig& cfg, const DiffusionSchedule& sched, double omega) {
  Graph<T> g(true);
  auto lg = compute_loss(g, rec, t, eps, params, cfg, sched, omega);
  g.backward(lg.total);
  g.accumulate_param_grads(params);
  return lg.parts;
}

namespace {

template <typename T>
std::string offending_array(const ModelParams<T>& params) {
  if (auto bad = params.first_nonfinite(); !bad.empty()) return bad;
  for (const auto& a : params.arrays())
    if (!a.grad.all_finite()) return a.name + " (gradient)";
  return "<none: loss inputs>";
}

template <typename T>
Matrix<T> standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix<T> m(rows, cols);
  for (auto& v : m.flat()) v = static_cast<T>(nd(rng));
  return m;
}

}  // namespace

template <typename T>
void train_in_place(ModelParams<T>& params, OptimizerState<T>& opt, std::vector<EpochStats>& history,
                    const std::vector<TrainingRecord<T>>& dataset, const TrainConfig& tcfg, const DenoiserConfig& mcfg,
                    const DiffusionSchedule& sched, const EpochCallback& on_epoch) {
  tcfg.validate();
  mcfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  if (tcfg.precision != precision_of<T>())
    throw std::invalid_argument(std::string("train: config precision ") + to_string(tcfg.precision) +
                                " does not match instantiated precision " + to_string(precision_of<T>()));
  for (const auto& r : dataset) {
    require_shape(r.clean.rows() == mcfg.n_rois && r.clean.cols() == mcfg.n_points && r.cond.same_shape(r.clean),
                  "train: record shape " + r.clean.shape_str() + " does not match config");
  }
  if (opt.first_moment.size() != params.size()) opt = OptimizerState<T>::zeros_like(params);

  // Separate stream from initialization so resumed runs stay reproducible.
  std::mt19937_64 rng(tcfg.seed * 0x9E3779B97F4A7C15ull + 0x5851F42D4C957F2Dull + history.size());
  std::uniform_int_distribution<int> step_dist(1, sched.steps());
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const int first_epoch = static_cast<int>(history.size()) + 1;
  for (int epoch = first_epoch; epoch < first_epoch + tcfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossParts sum;
    for (std::size_t idx : order) {
      const auto& rec = dataset[idx];
      const int t = step_dist(rng);
      const Matrix<T> eps = standard_normal<T>(rec.clean.rows(), rec.clean.cols(), rng);
      params.zero_grad();
      const LossParts parts = loss_and_grad(rec, t, eps, params, mcfg, sched, tcfg.omega);
      const bool grads_finite = std::all_of(params.arrays().begin(), params.arrays().end(),
                                            [](const auto& a) { return a.grad.all_finite(); });
      if (!std::isfinite(parts.total()) || !grads_finite)
        throw NumericalError("train: non-finite loss or gradient at epoch " + std::to_string(epoch) + "; offending array: " +
                             offending_array(params));
      adam_step(params, opt, tcfg);
      sum.noise += parts.noise;
      sum.reconstruction += parts.reconstruction;
      sum.sparsity += parts.sparsity;
    }
    const double n = static_cast<double>(dataset.size());
    EpochStats stats{epoch, {sum.noise / n, sum.reconstruction / n, sum.sparsity / n}};
    history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  const std::string bad = params.first_nonfinite();
  if (!bad.empty()) throw NumericalError("train: parameter array " + bad + " became non-finite");
}

template <typename T>
TrainResult<T> train(const std::vector<TrainingRecord<T>>& dataset, const TrainConfig& tcfg,
                     const DenoiserConfig& mcfg, const DiffusionSchedule& sched, const EpochCallback& on_epoch) {
  TrainResult<T> out{make_model_params<T>(mcfg, tcfg.seed), {}, {}};
  out.optimizer = OptimizerState<T>::zeros_like(out.params);
  train_in_place(out.params, out.optimizer, out.history, dataset, tcfg, mcfg, sched, on_epoch);
  return out;
}

bool FiniteDiffReport::passed() const {
  return std::all_of(arrays.begin(), arrays.end(), [](const auto& a) { return a.passed; });
}

std::vector<std::string> FiniteDiffReport::failing_arrays() const {
  std::vector<std::string> out;
  for (const auto& a : arrays)
    if (!a.passed) out.push_back(a.name);
  return out;
}

namespace {

template <typename T>
ModelParams<long double> to_extended(const ModelParams<T>& p) {
  ModelParams<long double> out;
  for (const auto& a : p.arrays())
    out.add(a.name, a.value.rows(), a.value.cols()).value = a.value.template cast<long double>();
  return out;
}

}  // namespace

template <typename T>
FiniteDiffReport finite_diff_check(ModelParams<T> params, const GradientProbe<T>& probe, const DenoiserConfig& cfg,
                                   const DiffusionSchedule& sched, const FiniteDiffOptions& opt,
                                   const std::function<void(ModelParams<T>&)>& gradient_hook) {
  if (!(opt.step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  params.zero_grad();
  loss_and_grad(probe.record, probe.t, probe.eps, params, cfg, sched, opt.omega);
  if (gradient_hook) gradient_hook(params);

  // Numeric derivatives are taken in extended precision at the same
  // parameter values, keeping rounding noise far below the tolerance.
  using X = long double;
  ModelParams<X> ref = to_extended(params);
  const TrainingRecord<X> rec{probe.record.clean.template cast<X>(), probe.record.cond.template cast<X>(),
                              probe.record.sc};
  const Matrix<X> eps = probe.eps.template cast<X>();
  auto loss = [&] {
    Graph<X> g(false);
    return g.scalar(compute_loss(g, rec, probe.t, eps, ref, cfg, sched, opt.omega).total);
  };
  const X base = loss();
  struct Diff {
    double central, forward, backward;
  };
  auto differences = [&](X& x, double h) {
    const X orig = x;
    x = orig + h;
    const X up = loss();
    x = orig - h;
    const X down = loss();
    x = orig;
    const X hu = (orig + h) - orig, hd = orig - (orig - h);
    return Diff{static_cast<double>((up - down) / (hu + hd)), static_cast<double>((up - base) / hu),
                static_cast<double>((base - down) / hd)};
  };
  auto rel = [&](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), opt.scale_floor});
  };

  std::mt19937_64 rng(opt.seed);
  FiniteDiffReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& arr = params.arrays()[k];
    auto& value = ref.arrays()[k].value;
    FiniteDiffArrayResult res;
    res.name = arr.name;
    std::vector<std::size_t> idx(arr.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i : idx) {
      if (res.entries_checked == opt.entries_per_array) break;
      const Diff d = differences(value[i], opt.step);
      // One-sided slopes that disagree mark a kink at the point itself; a
      // half-step estimate that disagrees marks a kink inside the interval
      // or rounding noise swamping a tiny gradient. Such entries are redrawn.
      if (rel(d.forward, d.backward) > 0.1 ||
          rel(d.central, differences(value[i], 0.5 * opt.step).central) > 0.5 * opt.tolerance) {
        ++res.entries_skipped;
        continue;
      }
      const double numeric = d.central;
      const double analytic = static_cast<double>(arr.grad[i]);
      res.max_rel_error = std::max(res.max_rel_error, rel(analytic, numeric));
      res.max_abs_analytic = std::max(res.max_abs_analytic, std::abs(analytic));
      ++res.entries_checked;
    }
    res.passed = res.max_rel_error <= opt.tolerance && res.entries_checked == std::min(idx.size(), opt.entries_per_array);
    report.arrays.push_back(std::move(res));
  }
  return report;
}

#define ECDIFF_INSTANTIATE(T)                                                                                   \
  template struct OptimizerState<T>;                                                                            \
  template void adam_step(ModelParams<T>&, OptimizerState<T>&, const TrainConfig&);                             \
  template LossGraph<T> compute_loss(Graph<T>&, const TrainingRecord<T>&, int, const Matrix<T>&,                \
                                     const ModelParams<T>&, const DenoiserConfig&, const DiffusionSchedule&,    \
                                     double);                                                                   \
  template LossParts compute_loss(const TrainingRecord<T>&, int, const Matrix<T>&, const ModelParams<T>&,       \
                                  const DenoiserConfig&, const DiffusionSchedule&, double);                     \
  template LossParts loss_and_grad(const TrainingRecord<T>&, int, const Matrix<T>&, ModelParams<T>&,            \
                                   const DenoiserConfig&, const DiffusionSchedule&, double);                    \
  template void train_in_place(ModelParams<T>&, OptimizerState<T>&, std::vector<EpochStats>&,                   \
                               const std::vector<TrainingRecord<T>>&, const TrainConfig&, const DenoiserConfig&, \
                               const DiffusionSchedule&, const EpochCallback&);                                 \
  template TrainResult<T> train(const std::vector<TrainingRecord<T>>&, const TrainConfig&, const DenoiserConfig&, \
                                const DiffusionSchedule&, const EpochCallback&);                                \
  template FiniteDiffReport finite_diff_check(ModelParams<T>, const GradientProbe<T>&, const DenoiserConfig&,   \
                                              const DiffusionSchedule&, const FiniteDiffOptions&,               \
                                              const std::function<void(ModelParams<T>&)>&);

ECDIFF_INSTANTIATE(float)
ECDIFF_INSTANTIATE(double)
#undef ECDIFF_INSTANTIATE

template LossGraph<long double> compute_loss(Graph<long double>&, const TrainingRecord<long double>&, int,
                                             const Matrix<long double>&, const ModelParams<long double>&,
                                             const DenoiserConfig&, const DiffusionSchedule&, double);

}  // namespace ecdiff

#include "ecdiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ecdiff {

DiffusionSchedule::DiffusionSchedule(std::vector<double> betas, int coarse_steps, int stride)
    : betas_(std::move(betas)), coarse_steps_(coarse_steps), stride_(stride) {
  if (betas_.empty()) throw std::invalid_argument("schedule: need at least one step");
  if (coarse_steps <= 0 || stride <= 0)
    throw std::invalid_argument("schedule: coarse steps and stride must be positive");
  if (static_cast<long long>(coarse_steps) * stride != static_cast<long long>(betas_.size()))
    throw std::invalid_argument("schedule: steps (" + std::to_string(betas_.size()) +
                                ") must equal coarse_steps * stride (" + std::to_string(coarse_steps) + "*" +
                                std::to_string(stride) + ")");
  alpha_hat_.resize(betas_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    if (!(betas_[i] > 0.0 && betas_[i] < 1.0)) throw std::invalid_argument("schedule: betas must lie in (0,1)");
    if (i > 0 && betas_[i] < betas_[i - 1]) throw std::invalid_argument("schedule: betas must be nondecreasing");
    prod *= 1.0 - betas_[i];
    alpha_hat_[i] = prod;
  }
}

std::size_t DiffusionSchedule::index(int t) const {
  if (t < 1 || t > steps())
    throw std::out_of_range("step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  return static_cast<std::size_t>(t - 1);
}

double DiffusionSchedule::alpha_hat(int t) const {
  if (t == 0) return 1.0;
  return alpha_hat_[index(t)];
}

DiffusionSchedule build_schedule(int steps, double beta_start, double beta_end, int coarse_steps, int stride) {
  if (steps <= 0) throw std::invalid_argument("schedule: steps must be positive");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
    throw std::invalid_argument("schedule: require 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
  }
  return DiffusionSchedule(std::move(betas), coarse_steps, stride);
}

DiffusionSchedule default_schedule() { return build_schedule(100, 1e-4, 0.05, 10, 10); }

namespace {

template <typename T>
Matrix<T> combine(double a, const Matrix<T>& x, double b, const Matrix<T>& y) {
  require_shape(x.same_shape(y), "diffusion: shape mismatch " + x.shape_str() + " vs " + y.shape_str());
  Matrix<T> out(x.rows(), x.cols());
  const T ta = static_cast<T>(a), tb = static_cast<T>(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta * x[i] + tb * y[i];
  return out;
}

}  // namespace

template <typename T>
Matrix<T> forward_step(const Matrix<T>& prev, int t, const Matrix<T>& eps, const DiffusionSchedule& sched) {
  const double beta = sched.beta(t);
  return combine(std::sqrt(1.0 - beta), prev, std::sqrt(beta), eps);
}

template <typename T>
Matrix<T> q_sample(const Matrix<T>& clean, int t, const Matrix<T>& eps, const DiffusionSchedule& sched) {
  const double ah = sched.alpha_hat(t);
  return combine(std::sqrt(ah), clean, std::sqrt(1.0 - ah), eps);
}

template <typename T>
PosteriorParams<T> posterior_params(const Matrix<T>& noisy, const Matrix<T>& eps_hat, int t,
                                    const DiffusionSchedule& sched) {
  const double beta = sched.beta(t);
  const double alpha = 1.0 - beta;
  const double one_minus_ah = 1.0 - sched.alpha_hat(t);
  if (one_minus_ah < 1e-12) throw std::domain_error("posterior_params: schedule has 1 - alpha_hat below 1e-12");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  PosteriorParams<T> out;
  out.mean = combine(inv_sqrt_alpha, noisy, -inv_sqrt_alpha * beta / std::sqrt(one_minus_ah), eps_hat);
  out.variance = (1.0 - sched.alpha_hat(t - 1)) / one_minus_ah * beta;
  return out;
}

template <typename T>
Matrix<T> ddim_update(const Matrix<T>& noisy, const Matrix<T>& eps_hat, int t_cur, int t_prev,
                      const DiffusionSchedule& sched) {
  if (!(0 <= t_prev && t_prev < t_cur && t_cur <= sched.steps()))
    throw std::out_of_range("ddim_update: need 0 <= t_prev < t_cur <= T, got t_prev=" + std::to_string(t_prev) +
                            " t_cur=" + std::to_string(t_cur));
  const double ah_cur = sched.alpha_hat(t_cur);
  const double ah_prev = sched.alpha_hat(t_prev);
  // sqrt(ah_prev) * (x - sqrt(1 - ah_cur) e) / sqrt(ah_cur) + sqrt(1 - ah_prev) e
  const double ratio = std::sqrt(ah_prev / ah_cur);
  const double eps_coef = std::sqrt(1.0 - ah_prev) - ratio * std::sqrt(1.0 - ah_cur);
  return combine(ratio, noisy, eps_coef, eps_hat);
}

int stride_map(int fine_step, int stride, int coarse_steps) {
  const int j = fine_step / stride + 1;
  return j < coarse_steps ? j : coarse_steps;
}

#define ECDIFF_INSTANTIATE(T)                                                                             \
  template Matrix<T> forward_step(const Matrix<T>&, int, const Matrix<T>&, const DiffusionSchedule&);     \
  template Matrix<T> q_sample(const Matrix<T>&, int, const Matrix<T>&, const DiffusionSchedule&);         \
  template PosteriorParams<T> posterior_params(const Matrix<T>&, const Matrix<T>&, int,                   \
                                               const DiffusionSchedule&);                                 \
  template Matrix<T> ddim_update(const Matrix<T>&, const Matrix<T>&, int, int, const DiffusionSchedule&);

ECDIFF_INSTANTIATE(float)
ECDIFF_INSTANTIATE(double)
ECDIFF_INSTANTIATE(long double)
#undef ECDIFF_INSTANTIATE

}  // namespace ecdiff

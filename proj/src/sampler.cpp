#include "ecdiff/sampler.hpp"

#include <random>
#include <stdexcept>

namespace ecdiff {

std::vector<int> coarse_anchors(const DiffusionSchedule& sched) {
  std::vector<int> out;
  for (int j = sched.coarse_steps(); j >= 0; --j) out.push_back(j * sched.stride());
  return out;
}

template <typename T>
SampleResult<T> reverse_process(Matrix<T> start, const DiffusionSchedule& sched, const NoisePredictor<T>& predictor,
                                const CausalReadout<T>& readout, bool keep_trace) {
  SampleResult<T> res;
  Matrix<T> h = std::move(start);
  const auto anchors = coarse_anchors(sched);
  for (std::size_t k = 0; k + 1 < anchors.size(); ++k) {
    const int t = anchors[k], t_prev = anchors[k + 1];
    Matrix<T> eps_hat = predictor(h, t);
    if (!eps_hat.all_finite())
      throw NumericalError("sample: noise estimate became non-finite at step " + std::to_string(t));
    if (readout) res.ec = readout(h, eps_hat, t);
    h = ddim_update(h, eps_hat, t, t_prev, sched);
    if (keep_trace) res.trace.push_back({t, t_prev, h, res.ec});
  }
  res.clean = std::move(h);
  return res;
}

template <typename T>
SampleResult<T> sample(const Matrix<T>& cond, const StructuralConnectivity& sc, const ModelParams<T>& params,
                       const DenoiserConfig& cfg, const DiffusionSchedule& sched, std::uint64_t seed,
                       bool keep_trace) {
  cfg.validate();
  const std::string bad = params.first_nonfinite();
  if (!bad.empty()) throw NumericalError("sample: parameter array " + bad + " is not finite");
  require_shape(cond.rows() == cfg.n_rois && cond.cols() == cfg.n_points,
                "sample: condition " + cond.shape_str() + " does not match config");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix<T> start(cfg.n_rois, cfg.n_points);
  for (auto& v : start.flat()) v = static_cast<T>(nd(rng));

  NoisePredictor<T> predictor = [&](const Matrix<T>& noisy, int t) {
    return predict_noise(noisy, t, cond, sc, params, cfg);
  };
  CausalReadout<T> readout = [&](const Matrix<T>& noisy, const Matrix<T>& eps_hat, int) {
    return estimate_causal(noisy, eps_hat, params).ec;
  };
  return reverse_process(std::move(start), sched, predictor, readout, keep_trace);
}

#define ECDIFF_INSTANTIATE(T)                                                                                \
  template SampleResult<T> reverse_process(Matrix<T>, const DiffusionSchedule&, const NoisePredictor<T>&,    \
                                           const CausalReadout<T>&, bool);                                   \
  template SampleResult<T> sample(const Matrix<T>&, const StructuralConnectivity&, const ModelParams<T>&,    \
                                  const DenoiserConfig&, const DiffusionSchedule&, std::uint64_t, bool);

ECDIFF_INSTANTIATE(float)
ECDIFF_INSTANTIATE(double)
#undef ECDIFF_INSTANTIATE

}  // namespace ecdiff

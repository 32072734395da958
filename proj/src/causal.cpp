#include "ecdiff/causal.hpp"

#include <array>
#include <cmath>
#include <random>

namespace ecdiff {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename T>
void register_causal_params(ModelParams<T>& p, std::size_t q) {
  p.add("causal.fc1.w", 2 * q, q);
  p.add("causal.fc1.b", 1, q);
  p.add("causal.fc2.w", q, q);
  p.add("causal.fc2.b", 1, q);
  p.add("causal.bilinear", q, q);
}

template <typename T>
CausalOutput<T> estimate_causal(Graph<T>& g, const ModelParams<T>& p, Var<T> noisy, Var<T> eps_hat) {
  require_shape(g.value(noisy).same_shape(g.value(eps_hat)),
                "estimate_causal: noisy " + g.value(noisy).shape_str() + " vs noise " + g.value(eps_hat).shape_str());
  const std::size_t q = g.value(noisy).cols();
  require_shape(p.at("causal.fc2.w").value.rows() == q, "estimate_causal: parameters built for a different q");
  auto P = [&](const char* n) { return g.param(p.at(n)); };
  const std::array<Var<T>, 2> parts{noisy, eps_hat};
  Var<T> h = g.relu(g.add_row(g.matmul(g.concat_cols(parts), P("causal.fc1.w")), P("causal.fc1.b")));
  Var<T> s = g.add_row(g.matmul(h, P("causal.fc2.w")), P("causal.fc2.b"));
  Var<T> scores = g.matmul_nt(g.matmul(s, P("causal.bilinear")), s);
  Var<T> ec = g.zero_diagonal(g.scale(scores, T(1) / std::sqrt(static_cast<T>(q))));
  return {ec, s};
}

template <typename T>
Var<T> sem_reconstruct(Graph<T>& g, Var<T> ec, Var<T> features) {
  require_shape(g.value(ec).rows() == g.value(features).rows(),
                "sem_reconstruct: E " + g.value(ec).shape_str() + " vs features " + g.value(features).shape_str());
  return g.matmul(g.transpose(ec), features);
}

template <typename T>
CausalEstimate<T> estimate_causal(const Matrix<T>& noisy, const Matrix<T>& eps_hat, const ModelParams<T>& params) {
  Graph<T> g(false);
  auto out = estimate_causal(g, params, g.constant(noisy), g.constant(eps_hat));
  return {g.value(out.ec), g.value(out.features)};
}

template <typename T>
Matrix<T> sem_reconstruct(const Matrix<T>& ec, const Matrix<T>& features) {
  Graph<T> g(false);
  return g.value(sem_reconstruct(g, g.constant(ec), g.constant(features)));
}

template <typename T>
void initialize_params(ModelParams<T>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& a : params.arrays()) {
    if (ends_with(a.name, ".gain")) {
      a.value.fill(T(1));
    } else if (ends_with(a.name, ".b") || ends_with(a.name, ".bias") || ends_with(a.name, ".bo")) {
      a.value.fill(T(0));
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(a.value.rows()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : a.value.flat()) v = static_cast<T>(u(rng));
    }
    a.grad.fill(T(0));
  }
}

template <typename T>
ModelParams<T> make_model_params(const DenoiserConfig& cfg, std::uint64_t seed) {
  ModelParams<T> p;
  register_denoiser_params(p, cfg);
  register_causal_params(p, cfg.n_points);
  initialize_params(p, seed);
  return p;
}

#define ECDIFF_INSTANTIATE(T)                                                                                  \
  template void register_causal_params(ModelParams<T>&, std::size_t);                                          \
  template CausalOutput<T> estimate_causal(Graph<T>&, const ModelParams<T>&, Var<T>, Var<T>);                  \
  template Var<T> sem_reconstruct(Graph<T>&, Var<T>, Var<T>);                                                  \
  template CausalEstimate<T> estimate_causal(const Matrix<T>&, const Matrix<T>&, const ModelParams<T>&);       \
  template Matrix<T> sem_reconstruct(const Matrix<T>&, const Matrix<T>&);                                      \
  template void initialize_params(ModelParams<T>&, std::uint64_t);                                             \
  template ModelParams<T> make_model_params(const DenoiserConfig&, std::uint64_t);

ECDIFF_INSTANTIATE(float)
ECDIFF_INSTANTIATE(double)
ECDIFF_INSTANTIATE(long double)
#undef ECDIFF_INSTANTIATE

}  // namespace ecdiff

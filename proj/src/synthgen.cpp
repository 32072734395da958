#include "ecdiff/synthgen.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ecdiff {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::NC: return "NC";
    case Stage::SMC: return "SMC";
    case Stage::EMCI: return "EMCI";
    case Stage::LMCI: return "LMCI";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  for (Stage st : all_stages())
    if (s == to_string(st)) return st;
  throw std::invalid_argument("unknown stage label '" + s + "' (expected NC, SMC, EMCI or LMCI)");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> v{Stage::NC, Stage::SMC, Stage::EMCI, Stage::LMCI};
  return v;
}

double spectral_radius(const MatrixD& m) {
  require_shape(m.rows() == m.cols(), "spectral_radius: matrix not square");
  if (m.rows() == 0) return 0.0;
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  Eigen::EigenSolver<Eigen::MatrixXd> solver(e, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined state
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

MatrixD gen_causal_matrix(std::size_t n, double density, std::uint64_t seed) {
  if (!(density > 0.0 && density < 1.0)) throw std::invalid_argument("gen_causal_matrix: density must lie in (0,1)");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> mag(0.1, 0.5);
  MatrixD e(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const bool present = unit(rng) < density;
      const double m = mag(rng);
      const bool negative = unit(rng) < 0.5;
      if (present) e(i, j) = negative ? -m : m;
    }
  }
  const double rho = spectral_radius(e);
  if (rho > 0.9) e *= 0.9 / rho;
  return e;
}

MatrixD simulate_series(const MatrixD& ec, std::size_t q, double sigma, std::size_t burn_in, std::uint64_t seed) {
  require_shape(ec.rows() == ec.cols(), "simulate_series: causal matrix not square");
  if (q < 2) throw std::invalid_argument("simulate_series: need at least 2 time points");
  if (!(sigma > 0.0)) throw std::invalid_argument("simulate_series: sigma must be positive");
  const double rho = spectral_radius(ec);
  if (rho > 1.0)
    throw std::invalid_argument("simulate_series: unstable causal matrix (spectral radius " + std::to_string(rho) +
                                ")");
  const std::size_t n = ec.rows();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<double> x(n, 0.0), next(n);
  MatrixD out(n, q);
  for (std::size_t k = 0; k < burn_in + q; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += ec(j, i) * x[j];
      next[i] = s + noise(rng);
    }
    x.swap(next);
    if (k >= burn_in)
      for (std::size_t i = 0; i < n; ++i) out(i, k - burn_in) = x[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto row = out.row(i);
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(q);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(q);
    const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
    for (double& v : row) v = (v - mean) * inv;
  }
  return out;
}

MatrixD degrade_to_rough(const MatrixD& clean, std::uint64_t seed, const RoughOptions& opt) {
  if (opt.smoothing_width == 0 || opt.smoothing_width % 2 == 0)
    throw std::invalid_argument("degrade_to_rough: smoothing width must be odd");
  const std::size_t n = clean.rows(), q = clean.cols();
  const long long half = static_cast<long long>(opt.smoothing_width / 2);
  const long long last = static_cast<long long>(q) - 1;
  auto reflect = [last](long long k) {
    while (k < 0 || k > last) {
      if (k < 0) k = -k;
      if (k > last) k = 2 * last - k;
      if (last == 0) return 0LL;
    }
    return k;
  };
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> gain(1.0 - opt.jitter, 1.0 + opt.jitter);
  std::normal_distribution<double> noise(0.0, 1.0);
  MatrixD out(n, q);
  for (std::size_t i = 0; i < n; ++i) {
    const double gamma = opt.jitter > 0.0 ? gain(rng) : 1.0;
    for (std::size_t k = 0; k < q; ++k) {
      double s = 0.0;
      for (long long o = -half; o <= half; ++o) s += clean(i, static_cast<std::size_t>(reflect(static_cast<long long>(k) + o)));
      s /= static_cast<double>(opt.smoothing_width);
      const double eta = opt.noise_sd > 0.0 ? opt.noise_sd * noise(rng) : 0.0;
      out(i, k) = gamma * s + eta;
    }
  }
  return out;
}

namespace {

std::vector<Edge> support(const MatrixD& e) {
  std::vector<Edge> out;
  for (std::size_t i = 0; i < e.rows(); ++i)
    for (std::size_t j = 0; j < e.cols(); ++j)
      if (i != j && e(i, j) != 0.0) out.push_back({i, j});
  return out;
}

}  // namespace

Cohort build_cohort(const CohortConfig& cfg) {
  if (cfg.stages.empty()) throw std::invalid_argument("build_cohort: need at least one stage");
  if (cfg.subjects_per_stage == 0) throw std::invalid_argument("build_cohort: subjects_per_stage must be positive");
  Cohort c;
  c.config = cfg;
  c.base_ec = gen_causal_matrix(cfg.n_rois, cfg.density, derive_seed(cfg.seed, 0));

  const auto edges = support(c.base_ec);
  if (cfg.stages.size() > 1 && 2 * cfg.perturbed_edges > edges.size())
    throw std::invalid_argument("build_cohort: " + std::to_string(2 * cfg.perturbed_edges) +
                                " perturbed edges requested but base graph has only " + std::to_string(edges.size()));

  std::mt19937_64 rng(derive_seed(cfg.seed, 1));
  for (std::size_t s = 1; s < cfg.stages.size(); ++s) {
    std::vector<Edge> pool = edges;
    std::shuffle(pool.begin(), pool.end(), rng);
    StageTransition tr{cfg.stages[s - 1], cfg.stages[s], {}, {}};
    const auto k = static_cast<std::ptrdiff_t>(cfg.perturbed_edges);
    tr.enhanced.assign(pool.begin(), pool.begin() + k);
    tr.diminished.assign(pool.begin() + k, pool.begin() + 2 * k);
    for (const auto* list : {&tr.enhanced, &tr.diminished})
      for (const Edge& e : *list) c.base_ec(e.source, e.target) = std::abs(c.base_ec(e.source, e.target));
    c.transitions.push_back(std::move(tr));
  }

  c.stage_ec.push_back(c.base_ec);
  for (const auto& tr : c.transitions) {
    MatrixD next = c.stage_ec.back();
    for (const Edge& e : tr.enhanced) next(e.source, e.target) *= 1.5;
    for (const Edge& e : tr.diminished) next(e.source, e.target) *= 0.5;
    c.stage_ec.push_back(std::move(next));
  }
  double max_rho = 0.0;
  for (const auto& m : c.stage_ec) max_rho = std::max(max_rho, spectral_radius(m));
  if (max_rho > 0.9) {
    const double f = 0.9 / max_rho;
    c.base_ec *= f;
    for (auto& m : c.stage_ec) m *= f;
  }

  MatrixD adj(cfg.n_rois, cfg.n_rois);
  for (std::size_t i = 0; i < cfg.n_rois; ++i)
    for (std::size_t j = 0; j < cfg.n_rois; ++j)
      adj(i, j) = 0.5 * (std::abs(c.base_ec(i, j)) + std::abs(c.base_ec(j, i)));
  c.sc = std::make_shared<const StructuralConnectivity>(std::move(adj));

  std::uint64_t index = 0;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    for (std::size_t k = 0; k < cfg.subjects_per_stage; ++k, ++index) {
      SubjectRecord rec;
      rec.stage = cfg.stages[s];
      char id[32];
      std::snprintf(id, sizeof id, "%s_%03zu", to_string(rec.stage), k);
      rec.id = id;
      rec.seed = derive_seed(cfg.seed, 1000 + index);
      std::mt19937_64 srng(rec.seed);
      std::uniform_real_distribution<double> jit(1.0 - cfg.weight_jitter, 1.0 + cfg.weight_jitter);
      rec.ec_true = c.stage_ec[s];
      for (auto& v : rec.ec_true.flat())
        if (v != 0.0) v *= jit(srng);
      rec.clean = simulate_series(rec.ec_true, cfg.n_points, cfg.sigma, cfg.burn_in, derive_seed(rec.seed, 1));
      rec.rough = degrade_to_rough(rec.clean, derive_seed(rec.seed, 2), cfg.rough);
      rec.sc = c.sc;
      c.subjects.push_back(std::move(rec));
    }
  }
  return c;
}

}  // namespace ecdiff

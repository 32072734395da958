#include "ecdiff/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ecdiff {

ReconstructionMetrics reconstruction_metrics(const MatrixD& predicted, const MatrixD& truth) {
  require_shape(predicted.same_shape(truth),
                "reconstruction_metrics: " + predicted.shape_str() + " vs " + truth.shape_str());
  require_shape(!truth.empty(), "reconstruction_metrics: empty input");
  double abs_sum = 0, sq_sum = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = predicted[i] - truth[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  const double n = static_cast<double>(truth.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

std::vector<std::vector<std::size_t>> kfold_split(const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (k == 0 || k > n) throw std::invalid_argument("kfold_split: need 1 <= k <= n");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  for (const auto& [label, members] : by_class)
    if (members.size() < k)
      throw std::invalid_argument("kfold_split: class " + std::to_string(label) + " has " +
                                  std::to_string(members.size()) + " members, fewer than k=" + std::to_string(k));
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t offset = 0;
  for (auto& [label, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < members.size(); ++i) folds[(offset + i) % k].push_back(members[i]);
    offset += members.size();
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

BinaryMetrics metrics_from_confusion(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn) {
  BinaryMetrics m;
  const double total = static_cast<double>(tp + tn + fp + fn);
  m.acc = total > 0 ? static_cast<double>(tp + tn) / total : 0.0;
  m.sen = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.spe = tn + fp > 0 ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;
  return m;
}

double auc_mann_whitney(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] == 1) {
      pos_rank_sum += rank[i];
      ++n_pos;
    }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc: need both classes");
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

std::vector<double> vectorize_off_diagonal(const MatrixD& m) {
  std::vector<double> out;
  out.reserve(m.rows() * m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (i != j) out.push_back(m(i, j));
  return out;
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct Logistic {
  std::vector<double> w;
  double b = 0;
  double score(const std::vector<double>& x) const {
    double z = b;
    for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * x[i];
    return sigmoid(z);
  }
};

Logistic fit_logistic(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                      const ClassifierOptions& opt) {
  const std::size_t d = x.front().size();
  const double n = static_cast<double>(x.size());
  Logistic model{std::vector<double>(d, 0.0), 0.0};
  std::vector<double> gw(d);
  for (int it = 0; it < opt.iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0;
    for (std::size_t s = 0; s < x.size(); ++s) {
      const double r = model.score(x[s]) - static_cast<double>(y[s]);
      for (std::size_t i = 0; i < d; ++i) gw[i] += r * x[s][i];
      gb += r;
    }
    for (std::size_t i = 0; i < d; ++i) model.w[i] -= opt.learning_rate * (gw[i] / n + opt.l2 * model.w[i]);
    model.b -= opt.learning_rate * gb / n;
  }
  return model;
}

}  // namespace

ClassificationReport train_eval_classifier(const std::vector<MatrixD>& ecs, const std::vector<int>& labels,
                                           std::size_t k, std::uint64_t seed, const ClassifierOptions& opt) {
  if (ecs.size() != labels.size()) throw std::invalid_argument("classifier: ECs and labels differ in length");
  for (int l : labels)
    if (l != 0 && l != 1) throw std::invalid_argument("classifier: labels must be 0 or 1");
  std::vector<std::vector<double>> features;
  for (const auto& e : ecs) features.push_back(vectorize_off_diagonal(e));
  const std::size_t d = features.front().size();

  ClassificationReport report;
  const auto folds = kfold_split(labels, k, seed);
  report.folds = folds.size();
  std::vector<char> in_test(ecs.size());
  for (const auto& test : folds) {
    std::fill(in_test.begin(), in_test.end(), 0);
    for (std::size_t i : test) in_test[i] = 1;
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < ecs.size(); ++i)
      if (!in_test[i]) train.push_back(i);
    auto single_class = [&](const std::vector<std::size_t>& idx) {
      return std::all_of(idx.begin(), idx.end(), [&](std::size_t i) { return labels[i] == labels[idx[0]]; });
    };
    if (train.empty() || single_class(train) || single_class(test))
      throw std::invalid_argument("classifier: degenerate single-class fold");

    std::vector<double> mean(d, 0.0), sd(d, 0.0);
    for (std::size_t i : train)
      for (std::size_t f = 0; f < d; ++f) mean[f] += features[i][f];
    for (double& m : mean) m /= static_cast<double>(train.size());
    for (std::size_t i : train)
      for (std::size_t f = 0; f < d; ++f) sd[f] += (features[i][f] - mean[f]) * (features[i][f] - mean[f]);
    for (double& s : sd) {
      s = std::sqrt(s / static_cast<double>(train.size()));
      if (s == 0.0) s = 1.0;
    }
    auto standardize = [&](std::size_t i) {
      std::vector<double> x(d);
      for (std::size_t f = 0; f < d; ++f) x[f] = (features[i][f] - mean[f]) / sd[f];
      return x;
    };
    std::vector<std::vector<double>> xtr;
    std::vector<int> ytr;
    for (std::size_t i : train) {
      xtr.push_back(standardize(i));
      ytr.push_back(labels[i]);
    }
    const Logistic model = fit_logistic(xtr, ytr, opt);

    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::vector<double> scores;
    std::vector<int> yte;
    for (std::size_t i : test) {
      const double s = model.score(standardize(i));
      scores.push_back(s);
      yte.push_back(labels[i]);
      const bool pred = s >= 0.5;
      if (labels[i] == 1) (pred ? tp : fn)++;
      else (pred ? fp : tn)++;
    }
    BinaryMetrics m = metrics_from_confusion(tp, tn, fp, fn);
    m.auc = auc_mann_whitney(scores, yte);
    report.per_fold.push_back(m);
  }
  const double nf = static_cast<double>(report.per_fold.size());
  for (const auto& m : report.per_fold) {
    report.mean.acc += m.acc / nf;
    report.mean.sen += m.sen / nf;
    report.mean.spe += m.spe / nf;
    report.mean.auc += m.auc / nf;
  }
  return report;
}

MatrixD group_mean_ec(const std::vector<MatrixD>& ecs) {
  if (ecs.empty()) throw std::invalid_argument("group_mean_ec: empty group");
  MatrixD mean(ecs[0].rows(), ecs[0].cols());
  for (const auto& e : ecs) mean += e;
  mean *= 1.0 / static_cast<double>(ecs.size());
  for (std::size_t i = 0; i < std::min(mean.rows(), mean.cols()); ++i) mean(i, i) = 0.0;
  return mean;
}

MatrixD group_mean_ec(const std::vector<MatrixD>& ecs, const std::vector<Stage>& stages, Stage stage) {
  if (ecs.size() != stages.size()) throw std::invalid_argument("group_mean_ec: ECs and stages differ in length");
  std::vector<MatrixD> group;
  for (std::size_t i = 0; i < ecs.size(); ++i)
    if (stages[i] == stage) group.push_back(ecs[i]);
  if (group.empty()) throw std::invalid_argument(std::string("group_mean_ec: no subjects in stage ") + to_string(stage));
  return group_mean_ec(group);
}

AlteredMode parse_altered_mode(const std::string& s) {
  if (s == "difference") return AlteredMode::Difference;
  if (s == "log-ratio" || s == "log_ratio") return AlteredMode::LogRatio;
  throw std::invalid_argument("unknown altered mode '" + s + "' (expected difference or log-ratio)");
}

MatrixD altered_ec(const MatrixD& former, const MatrixD& latter, AlteredMode mode) {
  require_shape(former.same_shape(latter) && former.rows() == former.cols(),
                "altered_ec: " + former.shape_str() + " vs " + latter.shape_str());
  constexpr double delta = 1e-6;
  MatrixD out(former.rows(), former.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) {
      if (i == j) continue;
      const double f = former(i, j), l = latter(i, j);
      const bool same_sign = (f > 0 && l > 0) || (f < 0 && l < 0);
      if (mode == AlteredMode::LogRatio && same_sign) {
        const double sign = f > 0 ? 1.0 : -1.0;
        out(i, j) = sign * (std::log(std::abs(l) + delta) - std::log(std::abs(f) + delta));
      } else {
        out(i, j) = l - f;
      }
    }
  }
  return out;
}

AlteredEC altered_ec(const MatrixD& former, Stage former_stage, const MatrixD& latter, Stage latter_stage,
                     AlteredMode mode) {
  return {altered_ec(former, latter, mode), former_stage, latter_stage};
}

EdgeRanking rank_altered_edges(const MatrixD& a, std::size_t top_k) {
  EdgeRanking r;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (i == j) continue;
      if (a(i, j) > 0) r.enhanced.push_back({i, j, a(i, j)});
      else if (a(i, j) < 0) r.diminished.push_back({i, j, a(i, j)});
    }
  auto by_index = [](const RankedEdge& x, const RankedEdge& y) {
    return x.source != y.source ? x.source < y.source : x.target < y.target;
  };
  std::sort(r.enhanced.begin(), r.enhanced.end(), [&](const RankedEdge& x, const RankedEdge& y) {
    return x.value != y.value ? x.value > y.value : by_index(x, y);
  });
  std::sort(r.diminished.begin(), r.diminished.end(), [&](const RankedEdge& x, const RankedEdge& y) {
    return x.value != y.value ? x.value < y.value : by_index(x, y);
  });
  if (r.enhanced.size() > top_k) r.enhanced.resize(top_k);
  if (r.diminished.size() > top_k) r.diminished.resize(top_k);
  return r;
}

std::vector<RoiScore> roi_importance(const MatrixD& a, std::size_t top_k) {
  require_shape(a.rows() == a.cols(), "roi_importance: matrix not square");
  std::vector<RoiScore> out;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (j == i) continue;
      s += std::abs(a(i, j)) + std::abs(a(j, i));
    }
    out.push_back({i, s});
  }
  std::stable_sort(out.begin(), out.end(), [](const RoiScore& x, const RoiScore& y) { return x.strength > y.strength; });
  if (out.size() > top_k) out.resize(top_k);
  return out;
}

std::vector<PairScore> bidirectional_pairs(const MatrixD& a, std::size_t top_k, double display_floor) {
  require_shape(a.rows() == a.cols(), "bidirectional_pairs: matrix not square");
  std::vector<PairScore> out;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) {
      const double f = a(i, j), b = a(j, i);
      out.push_back({i, j, std::abs(f) + std::abs(b), f, b, std::abs(f) < display_floor,
                     std::abs(b) < display_floor});
    }
  std::stable_sort(out.begin(), out.end(), [](const PairScore& x, const PairScore& y) { return x.score > y.score; });
  if (out.size() > top_k) out.resize(top_k);
  return out;
}

}  // namespace ecdiff

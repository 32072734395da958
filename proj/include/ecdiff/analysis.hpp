#pragma once

// Downstream evaluation: reconstruction error, cross-validated classification
// on vectorized effective connectivity, and group-level altered-connectivity
// statistics (edge rankings, ROI importance, bidirectional pairs).

#include <cstdint>
#include <vector>

#include "ecdiff/matrix.hpp"
#include "ecdiff/synthgen.hpp"

namespace ecdiff {

struct ReconstructionMetrics {
  double mae = 0;
  double rmse = 0;
};

ReconstructionMetrics reconstruction_metrics(const MatrixD& predicted, const MatrixD& truth);

/// Stratified k folds over indices 0..labels.size()-1. Each class is
/// shuffled with `seed` and dealt round-robin, so per-class fold sizes differ
/// by at most one. Rejects k = 0, k > n, and classes with fewer than k members.
std::vector<std::vector<std::size_t>> kfold_split(const std::vector<int>& labels, std::size_t k, std::uint64_t seed);

struct BinaryMetrics {
  double acc = 0;
  double sen = 0;  // recall on the positive (patient) class
  double spe = 0;  // recall on the negative class
  double auc = 0;
};

/// ACC/SEN/SPE from a confusion matrix; auc is left at 0.
BinaryMetrics metrics_from_confusion(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn);

/// Mann-Whitney AUC (ties count one half). labels are 0/1.
double auc_mann_whitney(const std::vector<double>& scores, const std::vector<int>& labels);

struct ClassifierOptions {
  double learning_rate = 0.1;
  int iterations = 500;
  double l2 = 1e-2;
};

struct ClassificationReport {
  BinaryMetrics mean;
  std::size_t folds = 0;
  std::vector<BinaryMetrics> per_fold;
};

/// Off-diagonal entries in row-major order (N^2 - N features).
std::vector<double> vectorize_off_diagonal(const MatrixD& m);

/// k-fold logistic regression on vectorized ECs. Features are standardized
/// with training-fold statistics; decisions threshold the score at 0.5.
ClassificationReport train_eval_classifier(const std::vector<MatrixD>& ecs, const std::vector<int>& labels,
                                           std::size_t k, std::uint64_t seed, const ClassifierOptions& opt = {});

/// Entrywise mean with zero diagonal.
MatrixD group_mean_ec(const std::vector<MatrixD>& ecs);
/// Mean over the entries of `ecs` whose stage equals `stage`.
MatrixD group_mean_ec(const std::vector<MatrixD>& ecs, const std::vector<Stage>& stages, Stage stage);

enum class AlteredMode { Difference, LogRatio };

AlteredMode parse_altered_mode(const std::string& s);

struct AlteredEC {
  MatrixD matrix;
  Stage former;
  Stage latter;
};

/// Stage-to-stage change: latter - former (difference), or the
/// sign-preserving log(|latter|+1e-6) - log(|former|+1e-6) where the entries
/// share a nonzero sign, falling back to the difference elsewhere.
MatrixD altered_ec(const MatrixD& former, const MatrixD& latter, AlteredMode mode = AlteredMode::Difference);
AlteredEC altered_ec(const MatrixD& former, Stage former_stage, const MatrixD& latter, Stage latter_stage,
                     AlteredMode mode = AlteredMode::Difference);

struct RankedEdge {
  std::size_t source;
  std::size_t target;
  double value;
};

struct EdgeRanking {
  std::vector<RankedEdge> enhanced;    // largest positive first
  std::vector<RankedEdge> diminished;  // most negative first
};

EdgeRanking rank_altered_edges(const MatrixD& altered, std::size_t top_k);

struct RoiScore {
  std::size_t roi;
  double strength;
};

/// strength(i) = sum_j |A_ij| + |A_ji|, descending, ties by ROI index.
std::vector<RoiScore> roi_importance(const MatrixD& altered, std::size_t top_k);

struct PairScore {
  std::size_t first;   // lower ROI index
  std::size_t second;  // higher ROI index
  double score;        // |A(first,second)| + |A(second,first)|
  double forward;      // A(first, second)
  double backward;     // A(second, first)
  bool forward_suppressed;
  bool backward_suppressed;
};

/// Unordered pairs ranked by combined absolute change. Directions whose
/// individual strength is below `display_floor` are flagged, still scored.
std::vector<PairScore> bidirectional_pairs(const MatrixD& altered, std::size_t top_k, double display_floor = 0.1);

}  // namespace ecdiff

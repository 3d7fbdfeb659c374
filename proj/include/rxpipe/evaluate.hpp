#pragma once
// Model evaluation: pair-preserving k-fold cross-validation, Mann-Whitney
// AUC, per-window summary statistics, Gaussian KDE of the score
// distribution, and the high-performer flag.

#include "rxpipe/forest.hpp"

namespace rxpipe {

struct FoldPlan {
  int k = 10;
  std::vector<int32_t> fold_of_pair;  // pair index -> fold id
};

// Seeded shuffle of the pair indices, then a round-robin deal, so fold
// sizes differ by at most one pair and a matched pair never straddles
// folds. Throws "cohort too small for k folds" when n_pairs < k.
FoldPlan make_folds(int32_t n_pairs, int k, uint64_t seed);

// Mann-Whitney AUC via midranks: the fraction of (positive, negative)
// pairs ranked correctly plus half the ties. Throws on single-class input.
double auc(std::span<const double> scores, std::span<const uint8_t> labels);

struct ModelResult {
  int32_t generic = 0;
  int32_t window_days = 0;
  int32_t n_pairs = 0;
  int32_t n_features_postfilter = 0;
  std::vector<double> fold_aucs;
  double mean_auc = 0.0;
  double std_auc = 0.0;  // population std over the fold AUCs

  friend bool operator==(const ModelResult&, const ModelResult&) = default;
};

// For each fold: train a forest on every out-of-fold row (training code
// never sees the held-out rows), score the held-out rows, take the fold
// AUC. The per-fold forest seed is mixed from (params.seed, fold id).
// Fills everything except generic/window_days, which the caller owns.
ModelResult cross_validate(const FeatureMatrix& matrix, const std::vector<uint8_t>& labels,
                           const FoldPlan& plan, const ForestParams& params);

struct KdeCurve {
  std::vector<double> grid;     // 512 ascending evaluation points
  std::vector<double> density;  // non-negative, trapezoid-integrates to ~1
  double bandwidth = 0.0;
};

inline constexpr int kKdeGridPoints = 512;

// Gaussian kernel density. Bandwidth defaults to Silverman's rule
// h = 0.9 * min(sigma, IQR/1.34) * n^(-1/5), falling back to
// sigma * n^(-1/5) when the IQR is zero; identical values are an error
// ("zero-variance sample"). The grid spans [min - 4h, max + 4h] — wide
// enough that the trapezoid integral stays within 1e-3 of 1 even for
// tightly clustered samples.
KdeCurve kde_curve(std::span<const double> values,
                   std::optional<double> bandwidth = std::nullopt);

struct WindowSummary {
  double mean = 0.0;
  double stddev = 0.0;  // population std
  int32_t n_models = 0;
};

// Mean/std of mean_auc across the models of one window. Throws on empty.
WindowSummary window_summary(std::span<const ModelResult> results);

// Generic codes whose mean_auc >= threshold, sorted by descending
// mean_auc (ties by ascending generic).
std::vector<int32_t> flag_separable(std::span<const ModelResult> results,
                                    double threshold = 0.9167);

}  // namespace rxpipe

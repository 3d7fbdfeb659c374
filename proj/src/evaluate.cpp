#include "rxpipe/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rxpipe/rng.hpp"

namespace rxpipe {

FoldPlan make_folds(int32_t n_pairs, int k, uint64_t seed) {
  if (k < 2) throw std::invalid_argument("k must be at least 2");
  if (n_pairs < k) throw std::runtime_error("cohort too small for k folds");

  std::vector<int32_t> perm(size_t(n_pairs), 0);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);

  FoldPlan plan;
  plan.k = k;
  plan.fold_of_pair.assign(size_t(n_pairs), 0);
  for (int32_t i = 0; i < n_pairs; ++i) plan.fold_of_pair[size_t(perm[size_t(i)])] = i % k;
  return plan;
}

double auc(std::span<const double> scores, std::span<const uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores/labels mismatch");
  const size_t n = scores.size();
  size_t n1 = 0;
  for (uint8_t l : labels) n1 += l;
  const size_t n0 = n - n1;
  if (n1 == 0 || n0 == 0) throw std::runtime_error("auc needs both classes present");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Midranks over runs of equal scores; rank sum of the positives gives
  // the Mann-Whitney statistic.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (double(i + 1) + double(j)) / 2.0;  // ranks are 1-based
    for (size_t t = i; t < j; ++t)
      if (labels[order[t]]) rank_sum_pos += midrank;
    i = j;
  }
  const double u = rank_sum_pos - double(n1) * double(n1 + 1) / 2.0;
  return u / (double(n1) * double(n0));
}

namespace {

std::pair<double, double> mean_population_std(std::span<const double> xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= double(xs.size());
  return {mean, std::sqrt(var)};
}

}  // namespace

ModelResult cross_validate(const FeatureMatrix& matrix, const std::vector<uint8_t>& labels,
                           const FoldPlan& plan, const ForestParams& params) {
  const int32_t n_rows = matrix.n_rows();
  if (labels.size() != size_t(n_rows)) throw std::invalid_argument("labels/rows mismatch");
  if (n_rows % 2 != 0) throw std::invalid_argument("matrix rows are not paired");
  const int32_t n_pairs = n_rows / 2;
  if (plan.fold_of_pair.size() != size_t(n_pairs))
    throw std::invalid_argument("fold plan does not cover the matrix");

  ModelResult result;
  result.n_pairs = n_pairs;
  result.n_features_postfilter = matrix.n_features();
  result.fold_aucs.reserve(size_t(plan.k));

  std::vector<int32_t> train_rows, test_rows;
  for (int f = 0; f < plan.k; ++f) {
    train_rows.clear();
    test_rows.clear();
    for (int32_t p = 0; p < n_pairs; ++p) {
      auto& dst = plan.fold_of_pair[size_t(p)] == f ? test_rows : train_rows;
      dst.push_back(2 * p);
      dst.push_back(2 * p + 1);
    }
    if (test_rows.empty()) throw std::runtime_error("degenerate fold");

    // Training only ever receives the out-of-fold slice.
    FeatureMatrix train = matrix.subset_rows(train_rows);
    ForestParams fold_params = params;
    fold_params.seed = mix_seed(params.seed, uint64_t(f));
    Forest forest = train_forest(train, train.labels, fold_params);

    FeatureMatrix test = matrix.subset_rows(test_rows);
    size_t test_pos = 0;
    for (uint8_t l : test.labels) test_pos += l;
    if (test_pos == 0 || test_pos == test.labels.size())
      throw std::runtime_error("degenerate fold");

    std::vector<double> scores(test.labels.size());
    for (int32_t r = 0; r < test.n_rows(); ++r) scores[size_t(r)] = predict_proba(forest, test, r);
    result.fold_aucs.push_back(auc(scores, test.labels));
  }

  auto [mean, stddev] = mean_population_std(result.fold_aucs);
  result.mean_auc = mean;
  result.std_auc = stddev;
  return result;
}

namespace {

double quantile_linear(const std::vector<double>& sorted, double p) {
  const double pos = p * double(sorted.size() - 1);
  const size_t lo = size_t(pos);
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - double(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

KdeCurve kde_curve(std::span<const double> values, std::optional<double> bandwidth) {
  const size_t n = values.size();
  if (n < 2) throw std::invalid_argument("kde needs at least two values");

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  double h;
  if (bandwidth) {
    if (!(*bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be positive");
    h = *bandwidth;
  } else {
    double mean = 0.0;
    for (double v : sorted) mean += v;
    mean /= double(n);
    double ss = 0.0;
    for (double v : sorted) ss += (v - mean) * (v - mean);
    const double sigma = std::sqrt(ss / double(n - 1));  // sample std
    if (sigma == 0.0) throw std::runtime_error("zero-variance sample");
    const double iqr = quantile_linear(sorted, 0.75) - quantile_linear(sorted, 0.25);
    const double n_pow = std::pow(double(n), -0.2);
    h = iqr > 0.0 ? 0.9 * std::min(sigma, iqr / 1.34) * n_pow : sigma * n_pow;
  }

  const double lo = sorted.front() - 4.0 * h;
  const double hi = sorted.back() + 4.0 * h;
  const double step = (hi - lo) / double(kKdeGridPoints - 1);
  const double norm = 1.0 / (double(n) * h * std::sqrt(2.0 * std::acos(-1.0)));

  KdeCurve curve;
  curve.bandwidth = h;
  curve.grid.resize(kKdeGridPoints);
  curve.density.resize(kKdeGridPoints);
  for (int i = 0; i < kKdeGridPoints; ++i) {
    const double x = lo + step * double(i);
    double sum = 0.0;
    for (double v : sorted) {
      const double t = (x - v) / h;
      sum += std::exp(-0.5 * t * t);
    }
    curve.grid[size_t(i)] = x;
    curve.density[size_t(i)] = norm * sum;
  }
  return curve;
}

WindowSummary window_summary(std::span<const ModelResult> results) {
  if (results.empty()) throw std::invalid_argument("window_summary on empty result set");
  std::vector<double> means;
  means.reserve(results.size());
  for (const ModelResult& r : results) means.push_back(r.mean_auc);
  auto [mean, stddev] = mean_population_std(means);
  return {mean, stddev, int32_t(results.size())};
}

std::vector<int32_t> flag_separable(std::span<const ModelResult> results, double threshold) {
  std::vector<const ModelResult*> flagged;
  for (const ModelResult& r : results)
    if (r.mean_auc >= threshold) flagged.push_back(&r);
  std::sort(flagged.begin(), flagged.end(), [](const ModelResult* a, const ModelResult* b) {
    if (a->mean_auc != b->mean_auc) return a->mean_auc > b->mean_auc;
    return a->generic < b->generic;
  });
  std::vector<int32_t> out;
  out.reserve(flagged.size());
  for (const ModelResult* r : flagged) out.push_back(r->generic);
  return out;
}

}  // namespace rxpipe

#pragma once
// From-scratch random forest classifier: Gini decision trees over sparse
// binary columns plus the numeric AGE column, bootstrap resampling and
// fractional per-split feature subsampling. Every random draw comes from a
// stream derived from (seed, tree_index), so training is bit-reproducible
// and independent of scheduling.

#include <span>

#include "rxpipe/tabulate.hpp"

namespace rxpipe {

struct ForestParams {
  int n_trees = 500;
  double mtry_fraction = 0.10;  // fraction of features drawn as candidates per split
  bool bootstrap = true;
  int min_samples_split = 2;
  int max_depth = 0;  // 0 = unbounded
  uint64_t seed = 0;

  void validate() const;
};

// Flat arena node: feature >= 0 marks an internal split (binary features
// always at threshold 0.5), feature == -1 a leaf.
struct TreeNode {
  int32_t feature = -1;
  double threshold = 0.0;
  int32_t left = -1;
  int32_t right = -1;
  double positive_fraction = 0.0;  // leaves: class-1 fraction of the samples
  int32_t n = 0;                   // leaves: sample count (bootstrap multiplicity)

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  friend bool operator==(const Tree&, const Tree&) = default;
};

struct Forest {
  std::vector<Tree> trees;
  int32_t n_features = 0;  // catalog width the forest was trained against

  friend bool operator==(const Forest&, const Forest&) = default;
};

// 1 - p0^2 - p1^2 over a non-empty multiset of class labels.
double gini_impurity(std::span<const uint8_t> labels);

struct SplitChoice {
  int32_t feature = -1;
  double threshold = 0.0;
  double decrease = 0.0;  // weighted impurity decrease

  friend bool operator==(const SplitChoice&, const SplitChoice&) = default;
};

// Maximizes weighted impurity decrease over the candidate features; the AGE
// column tests midpoints between consecutive distinct observed values, all
// other columns threshold 0.5. Ties break to (lower feature id, lower
// threshold); comparisons are integer-exact so ties are reliable. Returns
// nothing when no split has positive decrease. `rows` may repeat indices
// (bootstrap); `labels` is indexed by original row id.
std::optional<SplitChoice> best_split(const FeatureMatrix& matrix,
                                      std::span<const int32_t> rows,
                                      std::span<const int32_t> candidate_features,
                                      std::span<const uint8_t> labels);

// Throws "degenerate cohort" when only one class is present.
Forest train_forest(const FeatureMatrix& matrix, const std::vector<uint8_t>& labels,
                    const ForestParams& params);

// Mean over trees of the reached leaf's positive fraction.
double predict_proba(const Forest& forest, const FeatureMatrix& matrix, int32_t row);

// Debug dump. Layout: {"n_features": F, "trees": [[node...]]} where each
// node is {"f": feature or -1, "t": threshold, "l": left, "r": right,
// "p": positive_fraction, "n": samples}.
std::string forest_json(const Forest& forest);

}  // namespace rxpipe

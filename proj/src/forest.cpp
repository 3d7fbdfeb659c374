#include "rxpipe/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "rxpipe/rng.hpp"

namespace rxpipe {

void ForestParams::validate() const {
  if (n_trees < 1) throw std::invalid_argument("n_trees must be positive");
  if (!(mtry_fraction > 0.0) || mtry_fraction > 1.0)
    throw std::invalid_argument("mtry_fraction must lie in (0, 1]");
  if (min_samples_split < 2) throw std::invalid_argument("min_samples_split must be at least 2");
  if (max_depth < 0) throw std::invalid_argument("max_depth must be non-negative");
}

double gini_impurity(std::span<const uint8_t> labels) {
  if (labels.empty()) throw std::invalid_argument("gini_impurity on empty label set");
  size_t ones = 0;
  for (uint8_t l : labels) ones += l;
  const double p1 = double(ones) / double(labels.size());
  const double p0 = 1.0 - p1;
  return 1.0 - p1 * p1 - p0 * p0;
}

namespace {

using i128 = __int128;

// Row-major packed bits over the binary columns; the AGE column reads
// through to the matrix. Built once per training run so split evaluation
// is a shift and mask instead of a binary search.
struct BitView {
  const FeatureMatrix* m;
  size_t words_per_row;
  std::vector<uint64_t> bits;

  explicit BitView(const FeatureMatrix& matrix)
      : m(&matrix), words_per_row((size_t(matrix.n_features()) + 63) / 64) {
    bits.assign(words_per_row * size_t(matrix.n_rows()), 0);
    for (int32_t r = 0; r < matrix.n_rows(); ++r) {
      uint64_t* row = bits.data() + size_t(r) * words_per_row;
      for (int32_t c : matrix.row_features[size_t(r)])
        row[size_t(c) >> 6] |= uint64_t(1) << (c & 63);
    }
  }

  bool bit(int32_t r, int32_t f) const {
    return (bits[size_t(r) * words_per_row + (size_t(f) >> 6)] >> (f & 63)) & 1;
  }

  bool is_age(int32_t f) const { return m->catalog[size_t(f)].kind == FeatureKey::Kind::Age; }

  double value(int32_t r, int32_t f) const {
    if (is_age(f)) return double(m->age[size_t(r)]);
    return bit(r, f) ? 1.0 : 0.0;
  }
};

// Weighted Gini decrease as an exact rational:
//   num = SL*n*nR + SR*n*nL - S*nL*nR,  den = n^2*nL*nR
// where S = n1^2 + n0^2 for the respective side. Positive decrease is
// num > 0, and two candidates compare by cross-multiplication, so ties
// break the same way on every platform.
struct ExactSplit {
  double threshold = 0.0;
  i128 num = 0;
  i128 den = 1;
};

i128 sum_squares(int64_t n1, int64_t n0) { return i128(n1) * n1 + i128(n0) * n0; }

ExactSplit score_counts(int64_t n, i128 s_parent, int64_t n_l, int64_t n1_l, int64_t n_r,
                        int64_t n1_r, double threshold) {
  const i128 s_l = sum_squares(n1_l, n_l - n1_l);
  const i128 s_r = sum_squares(n1_r, n_r - n1_r);
  ExactSplit e;
  e.threshold = threshold;
  e.num = s_l * n * n_r + s_r * n * n_l - s_parent * n_l * n_r;
  e.den = i128(n) * n * n_l * n_r;
  return e;
}

// Sign of a - b without leaving integer arithmetic.
int compare_splits(const ExactSplit& a, const ExactSplit& b) {
  const i128 lhs = a.num * b.den;
  const i128 rhs = b.num * a.den;
  if (lhs < rhs) return -1;
  if (lhs > rhs) return 1;
  return 0;
}

std::optional<ExactSplit> eval_binary(const BitView& view, std::span<const int32_t> rows,
                                      std::span<const uint8_t> labels, int32_t f, int64_t n,
                                      int64_t n1, i128 s_parent) {
  int64_t n_l = 0, n1_l = 0;  // unset bit reads 0 <= 0.5 and goes left
  for (int32_t r : rows) {
    if (!view.bit(r, f)) {
      ++n_l;
      n1_l += labels[size_t(r)];
    }
  }
  const int64_t n_r = n - n_l;
  if (n_l == 0 || n_r == 0) return std::nullopt;
  return score_counts(n, s_parent, n_l, n1_l, n_r, n1 - n1_l, 0.5);
}

std::optional<ExactSplit> eval_age(const BitView& view, std::span<const int32_t> rows,
                                   std::span<const uint8_t> labels, int64_t n, int64_t n1,
                                   i128 s_parent,
                                   std::vector<std::pair<int32_t, uint8_t>>& buf) {
  buf.clear();
  for (int32_t r : rows) buf.emplace_back(view.m->age[size_t(r)], labels[size_t(r)]);
  std::sort(buf.begin(), buf.end());

  std::optional<ExactSplit> best;
  int64_t n_l = 0, n1_l = 0;
  for (size_t i = 0; i + 1 < buf.size(); ++i) {
    ++n_l;
    n1_l += buf[i].second;
    if (buf[i].first == buf[i + 1].first) continue;  // prefix must end at a value boundary
    const double threshold = (double(buf[i].first) + double(buf[i + 1].first)) / 2.0;
    ExactSplit e = score_counts(n, s_parent, n_l, n1_l, n - n_l, n1 - n1_l, threshold);
    // Ascending thresholds with a strict comparison keep the lowest on ties.
    if (!best || compare_splits(e, *best) > 0) best = e;
  }
  return best;
}

std::optional<SplitChoice> best_split_impl(const BitView& view, std::span<const int32_t> rows,
                                           std::span<const int32_t> candidates,
                                           std::span<const uint8_t> labels,
                                           std::vector<std::pair<int32_t, uint8_t>>& age_buf) {
  const int64_t n = int64_t(rows.size());
  int64_t n1 = 0;
  for (int32_t r : rows) n1 += labels[size_t(r)];
  const i128 s_parent = sum_squares(n1, n - n1);

  std::optional<SplitChoice> best;
  ExactSplit best_exact;
  for (int32_t f : candidates) {
    std::optional<ExactSplit> e = view.is_age(f)
                                      ? eval_age(view, rows, labels, n, n1, s_parent, age_buf)
                                      : eval_binary(view, rows, labels, f, n, n1, s_parent);
    if (!e || e->num <= 0) continue;  // only strictly positive decreases qualify
    const int cmp = best ? compare_splits(*e, best_exact) : 1;
    if (cmp > 0 || (cmp == 0 && f < best->feature)) {
      best_exact = *e;
      best = SplitChoice{f, e->threshold, double(e->num) / double(e->den)};
    }
  }
  return best;
}

struct TreeBuilder {
  const BitView& view;
  std::span<const uint8_t> labels;
  const ForestParams& params;
  int mtry;
  Rng rng;
  Tree* tree = nullptr;

  std::vector<int32_t> rows;
  std::vector<int32_t> feat;
  std::vector<int32_t> scratch;
  std::vector<std::pair<int32_t, uint8_t>> age_buf;

  void build(Tree& out) {
    tree = &out;
    const int32_t n = view.m->n_rows();
    const int32_t n_features = view.m->n_features();
    rows.resize(size_t(n));
    if (params.bootstrap) {
      for (int32_t i = 0; i < n; ++i) rows[size_t(i)] = int32_t(rng.below(uint64_t(n)));
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    feat.resize(size_t(n_features));
    std::iota(feat.begin(), feat.end(), 0);
    grow(0, n, 0);
  }

  int32_t grow(int32_t begin, int32_t end, int depth) {
    const int32_t idx = int32_t(tree->nodes.size());
    tree->nodes.emplace_back();

    const int32_t size = end - begin;
    int32_t n1 = 0;
    for (int32_t i = begin; i < end; ++i) n1 += labels[size_t(rows[size_t(i)])];
    tree->nodes[size_t(idx)].n = size;
    tree->nodes[size_t(idx)].positive_fraction = double(n1) / double(size);

    const bool pure = n1 == 0 || n1 == size;
    const bool too_small = size < params.min_samples_split;
    const bool too_deep = params.max_depth > 0 && depth >= params.max_depth;
    if (pure || too_small || too_deep) return idx;

    // Partial Fisher-Yates draws mtry distinct candidates into feat[0..mtry).
    const int32_t n_features = int32_t(feat.size());
    for (int j = 0; j < mtry; ++j)
      std::swap(feat[size_t(j)], feat[size_t(j) + size_t(rng.below(uint64_t(n_features - j)))]);

    auto choice = best_split_impl(view, std::span(rows).subspan(size_t(begin), size_t(size)),
                                  std::span(feat).first(size_t(mtry)), labels, age_buf);
    if (!choice) return idx;

    // Stable two-way partition: left-goers compact forward in place, the
    // rest stage through scratch, so row order never depends on the
    // library's partition internals.
    scratch.clear();
    int32_t mid = begin;
    for (int32_t i = begin; i < end; ++i) {
      const int32_t r = rows[size_t(i)];
      if (view.value(r, choice->feature) <= choice->threshold)
        rows[size_t(mid++)] = r;
      else
        scratch.push_back(r);
    }
    std::copy(scratch.begin(), scratch.end(), rows.begin() + mid);

    const int32_t left = grow(begin, mid, depth + 1);
    const int32_t right = grow(mid, end, depth + 1);
    TreeNode& node = tree->nodes[size_t(idx)];  // re-resolve: children reallocate the arena
    node.feature = choice->feature;
    node.threshold = choice->threshold;
    node.left = left;
    node.right = right;
    return idx;
  }
};

}  // namespace

std::optional<SplitChoice> best_split(const FeatureMatrix& matrix, std::span<const int32_t> rows,
                                      std::span<const int32_t> candidate_features,
                                      std::span<const uint8_t> labels) {
  if (rows.empty()) throw std::invalid_argument("best_split on empty row set");
  if (labels.size() != size_t(matrix.n_rows()))
    throw std::invalid_argument("labels/rows mismatch");
  BitView view(matrix);
  std::vector<std::pair<int32_t, uint8_t>> age_buf;
  return best_split_impl(view, rows, candidate_features, labels, age_buf);
}

Forest train_forest(const FeatureMatrix& matrix, const std::vector<uint8_t>& labels,
                    const ForestParams& params) {
  params.validate();
  const int32_t n = matrix.n_rows();
  const int32_t n_features = matrix.n_features();
  if (labels.size() != size_t(n)) throw std::invalid_argument("labels/rows mismatch");
  if (n < 2 || n_features < 1) throw std::invalid_argument("matrix too small to train on");

  size_t ones = 0;
  for (uint8_t l : labels) ones += l;
  if (ones == 0 || ones == labels.size())
    throw std::runtime_error("degenerate cohort: only one class present");

  const int mtry =
      std::clamp(int(std::ceil(params.mtry_fraction * double(n_features))), 1, int(n_features));

  BitView view(matrix);
  Forest forest;
  forest.n_features = n_features;
  forest.trees.resize(size_t(params.n_trees));
  for (int t = 0; t < params.n_trees; ++t) {
    TreeBuilder builder{view, labels, params, mtry, Rng(mix_seed(params.seed, uint64_t(t)))};
    builder.build(forest.trees[size_t(t)]);
  }
  return forest;
}

double predict_proba(const Forest& forest, const FeatureMatrix& matrix, int32_t row) {
  if (forest.trees.empty()) throw std::invalid_argument("empty forest");
  if (matrix.n_features() != forest.n_features)
    throw std::runtime_error("feature catalog width does not match the trained forest");
  if (row < 0 || row >= matrix.n_rows()) throw std::out_of_range("row out of range");

  double sum = 0.0;
  for (const Tree& tree : forest.trees) {
    int32_t idx = 0;
    while (tree.nodes[size_t(idx)].feature >= 0) {
      const TreeNode& node = tree.nodes[size_t(idx)];
      idx = matrix.value(row, node.feature) <= node.threshold ? node.left : node.right;
    }
    sum += tree.nodes[size_t(idx)].positive_fraction;
  }
  return sum / double(forest.trees.size());
}

std::string forest_json(const Forest& forest) {
  nlohmann::ordered_json out;
  out["n_features"] = forest.n_features;
  nlohmann::ordered_json trees = nlohmann::json::array();
  for (const Tree& tree : forest.trees) {
    nlohmann::ordered_json nodes = nlohmann::json::array();
    for (const TreeNode& n : tree.nodes) {
      nodes.push_back({{"f", n.feature},
                       {"t", n.threshold},
                       {"l", n.left},
                       {"r", n.right},
                       {"p", n.positive_fraction},
                       {"n", n.n}});
    }
    trees.push_back(std::move(nodes));
  }
  out["trees"] = std::move(trees);
  return out.dump();
}

}  // namespace rxpipe

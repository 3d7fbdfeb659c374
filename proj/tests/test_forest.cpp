#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "rxpipe/forest.hpp"
#include "rxpipe/rng.hpp"

using namespace rxpipe;

namespace {

FeatureKey age_key() { return FeatureKey{}; }
FeatureKey dx_key(int32_t code) {
  return FeatureKey{FeatureKey::Kind::Diagnosis, code, std::nullopt};
}

// Balanced case/control rows with random ages and random per-column bit
// probabilities.
FeatureMatrix random_matrix(Rng& rng, int n_pairs, int n_binary) {
  FeatureMatrix m;
  m.catalog.push_back(age_key());
  for (int c = 1; c <= n_binary; ++c) m.catalog.push_back(dx_key(c));
  std::vector<double> p(size_t(n_binary) + 1, 0.0);
  for (int c = 1; c <= n_binary; ++c) p[size_t(c)] = rng.uniform();
  for (int r = 0; r < 2 * n_pairs; ++r) {
    m.rows.push_back(RowId{r + 1, r % 2 == 0});
    m.labels.push_back(r % 2 == 0);
    m.age.push_back(20 + int32_t(rng.below(50)));
    std::vector<int32_t> bits;
    for (int c = 1; c <= n_binary; ++c)
      if (rng.bernoulli(p[size_t(c)])) bits.push_back(c);
    m.row_features.push_back(bits);
  }
  return m;
}

// Exact-rational impurity decrease, derived term by term:
//   dec = gini(parent) - (nL/n) gini(L) - (nR/n) gini(R)
// with gini(X) = 1 - (n1^2 + n0^2)/|X|^2, accumulated with generic fraction
// arithmetic rather than the library's closed form.
struct Frac {
  __int128 num = 0;
  __int128 den = 1;
};

Frac frac_sub(Frac a, Frac b) { return {a.num * b.den - b.num * a.den, a.den * b.den}; }

int frac_cmp(Frac a, Frac b) {
  const __int128 lhs = a.num * b.den;
  const __int128 rhs = b.num * a.den;
  return lhs < rhs ? -1 : lhs > rhs ? 1 : 0;
}

Frac gini_frac(int64_t n1, int64_t n) {
  const int64_t n0 = n - n1;
  return {__int128(n) * n - __int128(n1) * n1 - __int128(n0) * n0, __int128(n) * n};
}

Frac scaled(Frac g, int64_t part, int64_t whole) {  // (part/whole) * g
  return {g.num * part, g.den * whole};
}

struct OracleSplit {
  int32_t feature = -1;
  double threshold = 0.0;
  Frac decrease;
};

std::optional<OracleSplit> oracle_best_split(const FeatureMatrix& m,
                                             const std::vector<int32_t>& rows,
                                             const std::vector<int32_t>& candidates,
                                             const std::vector<uint8_t>& labels) {
  const int64_t n = int64_t(rows.size());
  int64_t n1 = 0;
  for (int32_t r : rows) n1 += labels[size_t(r)];
  const Frac parent = gini_frac(n1, n);

  std::optional<OracleSplit> best;
  auto consider = [&](int32_t feature, double threshold) {
    int64_t n_l = 0, n1_l = 0;
    for (int32_t r : rows) {
      if (m.value(r, feature) <= threshold) {
        ++n_l;
        n1_l += labels[size_t(r)];
      }
    }
    const int64_t n_r = n - n_l;
    if (n_l == 0 || n_r == 0) return;
    Frac dec = frac_sub(frac_sub(parent, scaled(gini_frac(n1_l, n_l), n_l, n)),
                        scaled(gini_frac(n1 - n1_l, n_r), n_r, n));
    if (dec.num <= 0) return;
    const bool better =
        !best || frac_cmp(dec, best->decrease) > 0 ||
        (frac_cmp(dec, best->decrease) == 0 &&
         (feature < best->feature ||
          (feature == best->feature && threshold < best->threshold)));
    if (better) best = OracleSplit{feature, threshold, dec};
  };

  for (int32_t f : candidates) {
    if (m.catalog[size_t(f)].kind == FeatureKey::Kind::Age) {
      std::set<int32_t> ages;
      for (int32_t r : rows) ages.insert(m.age[size_t(r)]);
      std::vector<int32_t> sorted(ages.begin(), ages.end());
      for (size_t i = 0; i + 1 < sorted.size(); ++i)
        consider(f, (double(sorted[i]) + double(sorted[i + 1])) / 2.0);
    } else {
      consider(f, 0.5);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("gini_impurity evaluates the closed form") {
  CHECK(gini_impurity(std::vector<uint8_t>{1, 1, 1}) == doctest::Approx(0.0));
  CHECK(gini_impurity(std::vector<uint8_t>{0, 1}) == doctest::Approx(0.5));
  CHECK(gini_impurity(std::vector<uint8_t>{1, 1, 0, 0, 0, 0}) ==
        doctest::Approx(4.0 / 9.0).epsilon(1e-12));
  CHECK_THROWS_AS(gini_impurity(std::vector<uint8_t>{}), std::invalid_argument);
}

TEST_CASE("best_split takes a perfect separator with decrease = parent impurity") {
  FeatureMatrix m;
  m.catalog = {age_key(), dx_key(1)};
  for (int r = 0; r < 8; ++r) {
    m.rows.push_back(RowId{r + 1, r < 4});
    m.labels.push_back(r < 4);
    m.age.push_back(40);
    m.row_features.push_back(r < 4 ? std::vector<int32_t>{1} : std::vector<int32_t>{});
  }
  std::vector<int32_t> rows = {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int32_t> cand = {1};
  auto split = best_split(m, rows, cand, m.labels);
  REQUIRE(split.has_value());
  CHECK(split->feature == 1);
  CHECK(split->threshold == 0.5);
  CHECK(split->decrease == doctest::Approx(0.5).epsilon(1e-12));  // both children pure
}

TEST_CASE("best_split returns none when every candidate is constant") {
  FeatureMatrix m;
  m.catalog = {age_key(), dx_key(1)};
  for (int r = 0; r < 6; ++r) {
    m.rows.push_back(RowId{r + 1, r % 2 == 0});
    m.labels.push_back(r % 2 == 0);
    m.age.push_back(50);                       // constant: no midpoints
    m.row_features.push_back({1});             // constant: one side empty
  }
  std::vector<int32_t> rows = {0, 1, 2, 3, 4, 5};
  std::vector<int32_t> cand = {0, 1};
  CHECK_FALSE(best_split(m, rows, cand, m.labels).has_value());
}

TEST_CASE("AGE splits test midpoints between distinct observed values") {
  FeatureMatrix m;
  m.catalog = {age_key(), dx_key(1)};
  const int32_t ages[] = {30, 40, 50, 60};
  for (int r = 0; r < 4; ++r) {
    m.rows.push_back(RowId{r + 1, r >= 2});
    m.labels.push_back(r >= 2);
    m.age.push_back(ages[r]);
    m.row_features.push_back({});
  }
  std::vector<int32_t> rows = {0, 1, 2, 3};
  std::vector<int32_t> cand = {0, 1};
  auto split = best_split(m, rows, cand, m.labels);
  REQUIRE(split.has_value());
  CHECK(split->feature == 0);
  CHECK(split->threshold == doctest::Approx(45.0));
  CHECK(split->decrease == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("best_split matches the exhaustive exact-fraction oracle") {
  Rng rng(2024);
  int informative = 0;
  for (int trial = 0; trial < 300; ++trial) {
    FeatureMatrix m = random_matrix(rng, 3 + int(rng.below(12)), 1 + int(rng.below(6)));
    // Random multiset of rows (duplicates mimic bootstrap resamples).
    std::vector<int32_t> rows;
    const int draw = 4 + int(rng.below(uint64_t(m.n_rows())));
    for (int i = 0; i < draw; ++i) rows.push_back(int32_t(rng.below(uint64_t(m.n_rows()))));
    // Random candidate subset, AGE included half the time.
    std::vector<int32_t> cand;
    for (int32_t f = 0; f < int32_t(m.n_features()); ++f)
      if (rng.bernoulli(0.6)) cand.push_back(f);
    if (cand.empty()) cand.push_back(1);

    auto fast = best_split(m, rows, cand, m.labels);
    auto slow = oracle_best_split(m, rows, cand, m.labels);
    REQUIRE(fast.has_value() == slow.has_value());
    if (fast) {
      CHECK(fast->feature == slow->feature);
      CHECK(fast->threshold == doctest::Approx(slow->threshold).epsilon(1e-12));
      CHECK(fast->decrease ==
            doctest::Approx(double(slow->decrease.num) / double(slow->decrease.den))
                .epsilon(1e-9));
      ++informative;
    }
  }
  CHECK(informative > 100);  // the harness actually exercised real splits
}

TEST_CASE("train_forest is deterministic and seed-sensitive") {
  Rng rng(5);
  FeatureMatrix m = random_matrix(rng, 25, 10);
  ForestParams params;
  params.n_trees = 8;
  params.seed = 31337;
  Forest a = train_forest(m, m.labels, params);
  Forest b = train_forest(m, m.labels, params);
  CHECK(a == b);  // structural equality, node for node

  params.seed = 31338;
  Forest c = train_forest(m, m.labels, params);
  CHECK_FALSE(a == c);
}

TEST_CASE("a separable table trains to perfect training accuracy") {
  FeatureMatrix m;
  m.catalog = {age_key(), dx_key(1), dx_key(2)};
  Rng rng(6);
  for (int r = 0; r < 50; ++r) {
    const bool positive = r % 2 == 0;
    m.rows.push_back(RowId{r + 1, positive});
    m.labels.push_back(positive);
    m.age.push_back(20 + int32_t(rng.below(40)));
    std::vector<int32_t> bits;
    if (positive) bits.push_back(1);           // feature 1 encodes the label
    if (rng.bernoulli(0.5)) bits.push_back(2);  // noise
    m.row_features.push_back(bits);
  }
  ForestParams params;
  params.n_trees = 25;
  params.mtry_fraction = 1.0;
  params.seed = 9;
  Forest forest = train_forest(m, m.labels, params);
  for (int32_t r = 0; r < int32_t(m.n_rows()); ++r) {
    const double p = predict_proba(forest, m, r);
    CHECK((p > 0.5) == (m.labels[size_t(r)] == 1));
  }
}

TEST_CASE("bootstrap off and mtry 1.0 collapse the ensemble to one tree") {
  Rng rng(7);
  FeatureMatrix m = random_matrix(rng, 20, 6);
  ForestParams params;
  params.n_trees = 5;
  params.bootstrap = false;
  params.mtry_fraction = 1.0;
  params.seed = 12;
  Forest forest = train_forest(m, m.labels, params);
  for (const Tree& t : forest.trees) CHECK(t == forest.trees[0]);

  ForestParams single = params;
  single.n_trees = 1;
  Forest one = train_forest(m, m.labels, single);
  for (int32_t r = 0; r < int32_t(m.n_rows()); ++r)
    CHECK(predict_proba(forest, m, r) == doctest::Approx(predict_proba(one, m, r)));
}

TEST_CASE("single-class labels are rejected") {
  Rng rng(8);
  FeatureMatrix m = random_matrix(rng, 10, 4);
  std::vector<uint8_t> ones(m.n_rows(), 1);
  ForestParams params;
  CHECK_THROWS_WITH_AS(train_forest(m, ones, params), doctest::Contains("degenerate cohort"),
                       std::runtime_error);
}

TEST_CASE("predict_proba averages leaf fractions") {
  Forest forest;
  forest.n_features = 2;
  Tree leaf_a, leaf_b;
  TreeNode node;
  node.feature = -1;
  node.positive_fraction = 0.2;
  node.n = 5;
  leaf_a.nodes.push_back(node);
  node.positive_fraction = 0.6;
  leaf_b.nodes.push_back(node);
  forest.trees = {leaf_a, leaf_b};

  FeatureMatrix m;
  m.catalog = {age_key(), dx_key(1)};
  m.rows = {RowId{1, true}};
  m.labels = {1};
  m.age = {30};
  m.row_features = {{}};
  CHECK(predict_proba(forest, m, 0) == doctest::Approx(0.4));

  forest.trees[0].nodes[0].positive_fraction = 1.0;
  forest.trees[1].nodes[0].positive_fraction = 1.0;
  CHECK(predict_proba(forest, m, 0) == doctest::Approx(1.0));
}

TEST_CASE("predict_proba equals a naive per-tree traversal") {
  Rng rng(10);
  FeatureMatrix m = random_matrix(rng, 30, 8);
  ForestParams params;
  params.n_trees = 12;
  params.seed = 77;
  Forest forest = train_forest(m, m.labels, params);

  for (int32_t r = 0; r < int32_t(m.n_rows()); ++r) {
    double sum = 0.0;
    for (const Tree& tree : forest.trees) {
      int32_t at = 0;
      while (tree.nodes[size_t(at)].feature >= 0) {
        const TreeNode& node = tree.nodes[size_t(at)];
        at = m.value(r, node.feature) <= node.threshold ? node.left : node.right;
      }
      sum += tree.nodes[size_t(at)].positive_fraction;
    }
    const double expected = sum / double(forest.trees.size());
    CHECK(predict_proba(forest, m, r) == doctest::Approx(expected).epsilon(1e-15));
    CHECK(predict_proba(forest, m, r) >= 0.0);
    CHECK(predict_proba(forest, m, r) <= 1.0);
  }
}

TEST_CASE("consistently permuting columns leaves predictions unchanged") {
  Rng rng(11);
  FeatureMatrix m = random_matrix(rng, 20, 7);
  ForestParams params;
  params.n_trees = 6;
  params.seed = 5;
  Forest forest = train_forest(m, m.labels, params);

  // Permutation over the binary columns; AGE stays put at 0.
  std::vector<int32_t> perm(m.n_features());
  perm[0] = 0;
  std::vector<int32_t> rest;
  for (int32_t f = 1; f < int32_t(m.n_features()); ++f) rest.push_back(f);
  rng.shuffle(rest);
  for (size_t i = 0; i < rest.size(); ++i) perm[size_t(i) + 1] = rest[i];

  FeatureMatrix pm = m;
  for (size_t f = 0; f < m.n_features(); ++f)
    pm.catalog[size_t(perm[f])] = m.catalog[f];
  for (size_t r = 0; r < m.n_rows(); ++r) {
    std::vector<int32_t> bits;
    for (int32_t c : m.row_features[r]) bits.push_back(perm[size_t(c)]);
    std::sort(bits.begin(), bits.end());
    pm.row_features[r] = bits;
  }
  Forest pf = forest;
  for (Tree& tree : pf.trees)
    for (TreeNode& node : tree.nodes)
      if (node.feature >= 0) node.feature = perm[size_t(node.feature)];

  for (int32_t r = 0; r < int32_t(m.n_rows()); ++r)
    CHECK(predict_proba(forest, m, r) == predict_proba(pf, pm, r));
}

TEST_CASE("parameter and shape errors are reported") {
  Rng rng(12);
  FeatureMatrix m = random_matrix(rng, 6, 3);
  ForestParams params;
  params.n_trees = 0;
  CHECK_THROWS_AS(params.validate(), std::invalid_argument);
  params = ForestParams{};
  params.mtry_fraction = 0.0;
  CHECK_THROWS_AS(params.validate(), std::invalid_argument);
  params = ForestParams{};
  params.mtry_fraction = 1.5;
  CHECK_THROWS_AS(params.validate(), std::invalid_argument);

  params = ForestParams{};
  params.n_trees = 2;
  Forest forest = train_forest(m, m.labels, params);
  FeatureMatrix wider = m;
  wider.catalog.push_back(dx_key(99));
  CHECK_THROWS_AS(predict_proba(forest, wider, 0), std::runtime_error);
  CHECK_THROWS_AS(predict_proba(forest, m, int32_t(m.n_rows())), std::out_of_range);
}

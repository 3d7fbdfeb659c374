#include "rxpipe/tabulate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>

namespace rxpipe {

namespace {

std::optional<FeatureKey> key_of(const Event& e, int32_t target_generic) {
  FeatureKey key;
  switch (e.kind) {
    case EventKind::Diagnosis: key.kind = FeatureKey::Kind::Diagnosis; break;
    case EventKind::Prescription:
      // Prescription history uses generic codes only; the target generic is
      // banned as a column outright.
      if (e.code == target_generic) return std::nullopt;
      key.kind = FeatureKey::Kind::Prescription;
      break;
    case EventKind::Lab: key.kind = FeatureKey::Kind::Lab; break;
    case EventKind::Vital: key.kind = FeatureKey::Kind::Vital; break;
    case EventKind::Visit: key.kind = FeatureKey::Kind::Visit; break;
  }
  key.code = e.code;
  if (e.kind == EventKind::Lab || e.kind == EventKind::Vital) key.band = e.band;
  return key;
}

int32_t age_years(int32_t index_date, int32_t dob) {
  // Matched controls can be born up to the dob tolerance after a case
  // prescribed right after birth; clamp those edge ages to zero.
  if (index_date <= dob) return 0;
  return static_cast<int32_t>(std::floor(double(index_date - dob) / 365.25));
}

}  // namespace

std::string FeatureKey::label() const {
  switch (kind) {
    case Kind::Age: return "AGE";
    case Kind::Diagnosis: return "D:" + std::to_string(code);
    case Kind::Prescription: return "P:" + std::to_string(code);
    case Kind::Lab: return "L:" + std::to_string(code) + ":" + band_token(*band);
    case Kind::Vital: return "V:" + std::to_string(code) + ":" + band_token(*band);
    case Kind::Visit: return "S:" + std::to_string(code);
  }
  throw std::logic_error("bad feature kind");
}

bool FeatureMatrix::cell(int32_t row, int32_t feature) const {
  const auto& features = row_features[row];
  return std::binary_search(features.begin(), features.end(), feature);
}

double FeatureMatrix::value(int32_t row, int32_t feature) const {
  if (feature == 0) return static_cast<double>(age[row]);
  return cell(row, feature) ? 1.0 : 0.0;
}

FeatureMatrix FeatureMatrix::subset_rows(const std::vector<int32_t>& row_indices) const {
  FeatureMatrix out;
  out.catalog = catalog;
  out.rows.reserve(row_indices.size());
  for (int32_t r : row_indices) {
    out.rows.push_back(rows[r]);
    out.row_features.push_back(row_features[r]);
    out.age.push_back(age[r]);
    out.labels.push_back(labels[r]);
  }
  return out;
}

std::vector<Event> truncate_events(const std::vector<Event>& events, int32_t index_date,
                                   int32_t window_days) {
  const int64_t cutoff = int64_t{index_date} - window_days;
  std::vector<Event> out;
  for (const Event& e : events)
    if (e.date < cutoff) out.push_back(e);
  return out;
}

FeatureMatrix build_table(const Cohort& cohort, const EventStore& store,
                          const PatientTable& patients, int32_t window_days) {
  if (cohort.pairs.empty()) throw std::runtime_error("build_table: no pairs");

  // First pass: per-row key sets, then a deterministic catalog.
  std::vector<std::set<FeatureKey>> row_keys;
  std::set<FeatureKey> all_keys;
  FeatureMatrix matrix;
  for (const CasePair& pair : cohort.pairs) {
    for (const int64_t member : {pair.case_id, pair.control_id}) {
      const int32_t pidx = patients.index_of(member);
      std::set<FeatureKey> keys;
      for (const Event& e :
           truncate_events(store.events_of(pidx), pair.index_date, window_days)) {
        if (auto key = key_of(e, cohort.generic)) keys.insert(*key);
      }
      all_keys.insert(keys.begin(), keys.end());
      row_keys.push_back(std::move(keys));
      matrix.rows.push_back({member, member == pair.case_id});
      matrix.age.push_back(age_years(pair.index_date, patients.rows[pidx].dob));
      matrix.labels.push_back(member == pair.case_id ? 1 : 0);
    }
  }

  matrix.catalog.push_back(FeatureKey{});  // AGE
  std::map<FeatureKey, int32_t> column_of;
  for (const FeatureKey& key : all_keys) {
    column_of.emplace(key, static_cast<int32_t>(matrix.catalog.size()));
    matrix.catalog.push_back(key);
  }
  matrix.row_features.resize(matrix.rows.size());
  for (size_t r = 0; r < row_keys.size(); ++r) {
    auto& features = matrix.row_features[r];
    features.reserve(row_keys[r].size());
    for (const FeatureKey& key : row_keys[r]) features.push_back(column_of.at(key));
    // set iteration is ordered and column ids are assigned in key order,
    // so the feature list is already sorted.
  }
  return matrix;
}

FeatureMatrix prevalence_filter(const FeatureMatrix& matrix, double threshold,
                                PrevalenceMode mode) {
  const size_t n_rows = matrix.n_rows();
  std::vector<int32_t> count_case(matrix.n_features(), 0);
  std::vector<int32_t> count_all(matrix.n_features(), 0);
  size_t n_cases = 0;
  for (size_t r = 0; r < n_rows; ++r) {
    const bool is_case = mode == PrevalenceMode::PerGroup && matrix.labels[r] == 1;
    if (is_case) ++n_cases;
    for (int32_t f : matrix.row_features[r]) {
      ++count_all[f];
      if (is_case) ++count_case[f];
    }
  }

  std::vector<int32_t> remap(matrix.n_features(), -1);
  FeatureMatrix out;
  remap[0] = 0;
  out.catalog.push_back(matrix.catalog[0]);  // AGE survives unconditionally
  for (size_t f = 1; f < matrix.n_features(); ++f) {
    bool keep;
    if (mode == PrevalenceMode::Pooled) {
      keep = double(count_all[f]) / double(n_rows) > threshold;
    } else {
      const size_t n_controls = n_rows - n_cases;
      keep = double(count_case[f]) / double(n_cases) > threshold &&
             double(count_all[f] - count_case[f]) / double(n_controls) > threshold;
    }
    if (keep) {
      remap[f] = static_cast<int32_t>(out.catalog.size());
      out.catalog.push_back(matrix.catalog[f]);
    }
  }

  out.rows = matrix.rows;
  out.age = matrix.age;
  out.labels = matrix.labels;
  out.row_features.resize(n_rows);
  for (size_t r = 0; r < n_rows; ++r) {
    for (int32_t f : matrix.row_features[r])
      if (remap[f] >= 0) out.row_features[r].push_back(remap[f]);
  }
  return out;
}

void write_table_csv(std::ostream& out, const FeatureMatrix& matrix) {
  for (size_t f = 0; f < matrix.n_features(); ++f)
    out << matrix.catalog[f].label() << ',';
  out << "label\n";
  for (size_t r = 0; r < matrix.n_rows(); ++r) {
    out << matrix.age[r];
    for (size_t f = 1; f < matrix.n_features(); ++f)
      out << ',' << (matrix.cell(static_cast<int32_t>(r), static_cast<int32_t>(f)) ? 1 : 0);
    out << ',' << int(matrix.labels[r]) << '\n';
  }
}

void leakage_scan(const FeatureMatrix& matrix, const Cohort& cohort, const EventStore& store,
                  const PatientTable& patients, int32_t window_days, double sample_fraction) {
  const size_t n_rows = matrix.n_rows();
  if (n_rows != cohort.pairs.size() * 2)
    throw std::runtime_error("leakage_scan: matrix does not match cohort");
  size_t sample = std::max<size_t>(1, static_cast<size_t>(std::llround(n_rows * sample_fraction)));
  sample = std::min(sample, n_rows);

  for (size_t s = 0; s < sample; ++s) {
    const size_t r = s * n_rows / sample;  // evenly strided, deterministic
    const CasePair& pair = cohort.pairs[r / 2];
    const int32_t pidx = patients.index_of(matrix.rows[r].patient_id);
    const int64_t cutoff = int64_t{pair.index_date} - window_days;

    // Independent reconstruction straight from the raw events.
    std::set<FeatureKey> allowed;
    for (const Event& e : store.events_of(pidx)) {
      if (e.date >= cutoff) continue;
      if (auto key = key_of(e, cohort.generic)) allowed.insert(*key);
    }
    for (int32_t f : matrix.row_features[r]) {
      if (!allowed.count(matrix.catalog[f]))
        throw std::runtime_error("leakage: row " + std::to_string(r) + " bit " +
                                 matrix.catalog[f].label() +
                                 " has no event before the censor window");
    }
    for (const FeatureKey& key : allowed) {
      // Catalog is sorted past the AGE column.
      auto it = std::lower_bound(matrix.catalog.begin() + 1, matrix.catalog.end(), key);
      if (it == matrix.catalog.end() || *it != key ||
          !matrix.cell(static_cast<int32_t>(r),
                       static_cast<int32_t>(it - matrix.catalog.begin())))
        throw std::runtime_error("leakage_scan: row " + std::to_string(r) + " missing bit " +
                                 key.label());
    }
  }
}

}  // namespace rxpipe

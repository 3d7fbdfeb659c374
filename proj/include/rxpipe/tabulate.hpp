#pragma once
// Truncation-window censoring and the relational summary table: one row per
// cohort member, one column per binary (kind, code[, band]) feature plus a
// single numeric AGE column. Events dated in [index - window, index] never
// contribute a bit; a leakage scan re-checks this on every pipeline run.

#include <compare>

#include "rxpipe/cohort.hpp"
#include "rxpipe/ehr.hpp"

namespace rxpipe {

struct FeatureKey {
  // Age is the distinguished numeric feature and always occupies column 0.
  enum class Kind : uint8_t { Age, Diagnosis, Prescription, Lab, Vital, Visit };
  Kind kind = Kind::Age;
  int32_t code = 0;
  std::optional<Band> band;  // labs and vitals only

  auto operator<=>(const FeatureKey&) const = default;
  std::string label() const;  // "AGE", "D:12", "P:501", "L:9:+1", ...
};

struct RowId {
  int64_t patient_id = 0;
  bool is_case = false;

  friend bool operator==(const RowId&, const RowId&) = default;
};

// Sparse binary summary table. Rows come in (case, control) pairs in cohort
// order; labels are balanced exactly 50/50 by construction.
struct FeatureMatrix {
  std::vector<FeatureKey> catalog;                 // catalog[0] is AGE
  std::vector<RowId> rows;
  std::vector<std::vector<int32_t>> row_features;  // sorted set-bit columns per row
  std::vector<int32_t> age;                        // years, non-negative
  std::vector<uint8_t> labels;                     // 1 = case, 0 = control

  size_t n_rows() const { return rows.size(); }
  size_t n_features() const { return catalog.size(); }
  bool cell(int32_t row, int32_t feature) const;
  double value(int32_t row, int32_t feature) const;  // AGE in years, else 0/1
  FeatureMatrix subset_rows(const std::vector<int32_t>& row_indices) const;
};

// Exactly the events dated strictly before index_date - window_days. Applied
// to both members of a pair with the case's index date.
std::vector<Event> truncate_events(const std::vector<Event>& events, int32_t index_date,
                                   int32_t window_days);

// Assembles the summary table for one cohort at one window. The target
// generic never appears as a feature column. Throws on an empty cohort.
FeatureMatrix build_table(const Cohort& cohort, const EventStore& store,
                          const PatientTable& patients, int32_t window_days);

enum class PrevalenceMode {
  Pooled,   // fraction of all rows, labels never read
  PerGroup  // threshold must hold within cases and within controls alike
};

// Keeps AGE unconditionally and binary columns present in strictly more than
// `threshold` of the population, column order preserved.
FeatureMatrix prevalence_filter(const FeatureMatrix& matrix, double threshold = 0.01,
                                PrevalenceMode mode = PrevalenceMode::Pooled);

void write_table_csv(std::ostream& out, const FeatureMatrix& matrix);

// Re-scans raw events for a sample of rows and throws if any set bit cannot
// be produced by an event strictly before index - window (or if a bit that
// should be set is missing). Expects the unfiltered build_table output;
// sample_fraction 1.0 checks every row.
void leakage_scan(const FeatureMatrix& matrix, const Cohort& cohort, const EventStore& store,
                  const PatientTable& patients, int32_t window_days,
                  double sample_fraction = 0.01);

}  // namespace rxpipe

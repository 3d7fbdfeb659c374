#pragma once
// Data cleaning, drug eligibility and deterministic greedy case-control
// matching. Controls must never have been prescribed the target generic, must
// match the case's sex, be born within the dob tolerance, and still be in
// contact on the index date; each patient serves at most once per generic.

#include <utility>

#include "rxpipe/ehr.hpp"

namespace rxpipe {

struct CasePair {
  int32_t generic = 0;
  int64_t case_id = 0;
  int64_t control_id = 0;
  int32_t index_date = 0;  // the case's first prescription date

  friend bool operator==(const CasePair&, const CasePair&) = default;
};

struct Cohort {
  int32_t generic = 0;
  std::vector<CasePair> pairs;
  int32_t n_unmatched = 0;

  friend bool operator==(const Cohort&, const Cohort&) = default;
};

// Retains exactly the patients with at least min_dx diagnosis events (total,
// not unique codes) and at least min_visit_dates distinct event dates; drops
// all events of removed patients and rebuilds the store indices.
std::pair<PatientTable, EventStore> clean_patients(const PatientTable& patients,
                                                   const EventStore& store, int min_dx = 4,
                                                   int min_visit_dates = 2);

// Generics prescribed to at least min_cases distinct patients, ascending.
std::vector<int32_t> eligible_generics(const EventStore& store, int min_cases = 500);

// Greedy matching: cases in ascending (index_date, patient_id) order, each
// matched to the unused candidate with the smallest |dob difference| (ties to
// the lower patient id); cases with no candidate are counted unmatched.
Cohort match_controls(const EventStore& store, const PatientTable& patients, int32_t generic,
                      int dob_tolerance_days = 30);

// Post-hoc invariant checker run on every pipeline execution, not only in
// tests. Throws std::runtime_error on the first violated pair invariant.
void verify_cohort(const Cohort& cohort, const EventStore& store, const PatientTable& patients,
                   int dob_tolerance_days = 30);

void write_cohort_csv(std::ostream& out, const Cohort& cohort);

}  // namespace rxpipe

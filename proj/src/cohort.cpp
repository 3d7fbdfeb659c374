#include "rxpipe/cohort.hpp"

#include <algorithm>
#include <cstdlib>
#include <ostream>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace rxpipe {

std::pair<PatientTable, EventStore> clean_patients(const PatientTable& patients,
                                                   const EventStore& store, int min_dx,
                                                   int min_visit_dates) {
  PatientTable kept;
  std::vector<std::vector<Event>> by_patient;
  for (size_t i = 0; i < patients.size(); ++i) {
    const auto& events = store.by_patient[i];
    int n_dx = 0;
    int distinct_dates = 0;
    int32_t prev_date = INT32_MIN;
    for (const Event& e : events) {  // dates are sorted, so runs collapse
      if (e.kind == EventKind::Diagnosis) ++n_dx;
      if (e.date != prev_date) {
        ++distinct_dates;
        prev_date = e.date;
      }
    }
    if (n_dx < min_dx || distinct_dates < min_visit_dates) continue;
    kept.index_by_id.emplace(patients.rows[i].id, static_cast<int32_t>(kept.rows.size()));
    kept.rows.push_back(patients.rows[i]);
    by_patient.push_back(events);
  }
  EventStore cleaned = finalize_store(std::move(by_patient), kept);
  return {std::move(kept), std::move(cleaned)};
}

std::vector<int32_t> eligible_generics(const EventStore& store, int min_cases) {
  std::vector<int32_t> out;
  for (const auto& [generic, prescribed] : store.patients_by_generic)
    if (static_cast<int>(prescribed.size()) >= min_cases) out.push_back(generic);
  std::sort(out.begin(), out.end());
  return out;
}

Cohort match_controls(const EventStore& store, const PatientTable& patients, int32_t generic,
                      int dob_tolerance_days) {
  Cohort cohort;
  cohort.generic = generic;

  // Candidate index per sex, sorted by (dob, id) so the dob window is a
  // binary-searchable slice and the result is independent of storage order.
  struct Candidate {
    int32_t dob;
    int64_t id;
    int32_t index;
  };
  std::vector<Candidate> by_sex[2];
  for (size_t i = 0; i < patients.size(); ++i) {
    const Patient& p = patients.rows[i];
    by_sex[static_cast<int>(p.sex)].push_back({p.dob, p.id, static_cast<int32_t>(i)});
  }
  for (auto& v : by_sex)
    std::sort(v.begin(), v.end(), [](const Candidate& a, const Candidate& b) {
      return a.dob != b.dob ? a.dob < b.dob : a.id < b.id;
    });

  std::vector<bool> used(patients.size(), false);
  for (const FirstPrescription& fp : first_prescriptions(store, generic)) {
    const Patient& case_patient = patients.by_id(fp.patient_id);
    const auto& pool = by_sex[static_cast<int>(case_patient.sex)];
    const int32_t dob_lo = case_patient.dob - dob_tolerance_days;
    const int32_t dob_hi = case_patient.dob + dob_tolerance_days;
    auto first = std::lower_bound(pool.begin(), pool.end(), dob_lo,
                                  [](const Candidate& c, int32_t v) { return c.dob < v; });
    const Candidate* best = nullptr;
    int32_t best_diff = 0;
    for (auto it = first; it != pool.end() && it->dob <= dob_hi; ++it) {
      if (used[it->index]) continue;
      if (store.ever_prescribed(it->index, generic)) continue;
      if (patients.rows[it->index].last_contact < fp.index_date) continue;
      const int32_t diff = std::abs(it->dob - case_patient.dob);
      if (!best || diff < best_diff || (diff == best_diff && it->id < best->id)) {
        best = &*it;
        best_diff = diff;
      }
    }
    if (!best) {
      ++cohort.n_unmatched;
      continue;
    }
    used[best->index] = true;
    cohort.pairs.push_back({generic, fp.patient_id, best->id, fp.index_date});
  }
  return cohort;
}

void verify_cohort(const Cohort& cohort, const EventStore& store, const PatientTable& patients,
                   int dob_tolerance_days) {
  auto fail = [&](const CasePair& pair, const char* what) {
    throw std::runtime_error("cohort invariant violated for generic " +
                             std::to_string(cohort.generic) + ", case " +
                             std::to_string(pair.case_id) + ": " + what);
  };
  std::unordered_set<int64_t> seen;
  for (const CasePair& pair : cohort.pairs) {
    if (pair.case_id == pair.control_id) fail(pair, "case equals control");
    if (!seen.insert(pair.case_id).second) fail(pair, "case used twice");
    if (!seen.insert(pair.control_id).second) fail(pair, "control used twice");
    const Patient& case_patient = patients.by_id(pair.case_id);
    const Patient& control = patients.by_id(pair.control_id);
    if (store.ever_prescribed(patients.index_of(pair.control_id), cohort.generic))
      fail(pair, "control was prescribed the generic");
    if (case_patient.sex != control.sex) fail(pair, "sex mismatch");
    if (std::abs(case_patient.dob - control.dob) > dob_tolerance_days)
      fail(pair, "dob outside tolerance");
    if (control.last_contact < pair.index_date) fail(pair, "control lost to follow-up");
    // index_date must be the case's earliest prescription of this generic.
    int32_t first = INT32_MAX;
    for (const Event& e : store.events_of(patients.index_of(pair.case_id)))
      if (e.kind == EventKind::Prescription && e.code == cohort.generic)
        first = std::min(first, e.date);
    if (first != pair.index_date) fail(pair, "index date is not the first prescription");
  }
}

void write_cohort_csv(std::ostream& out, const Cohort& cohort) {
  out << "case_id,control_id,index_date\n";
  for (const CasePair& pair : cohort.pairs)
    out << pair.case_id << ',' << pair.control_id << ',' << pair.index_date << '\n';
}

}  // namespace rxpipe

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "rxpipe/cohort.hpp"
#include "rxpipe/rng.hpp"
#include "rxpipe/synth.hpp"

using namespace rxpipe;

namespace {

const std::string kPatientsHeader = "patient_id,sex,dob\n";
const std::string kEventsHeader = "patient_id,date,kind,code,brand_code,class_code,band\n";

std::pair<PatientTable, EventStore> store_from(const std::string& patients_csv,
                                               const std::string& events_csv) {
  std::istringstream pin(patients_csv);
  PatientTable patients = parse_patients(pin);
  std::istringstream ein(events_csv);
  EventStore store = parse_events(ein, patients);
  return {std::move(patients), std::move(store)};
}

std::string rx(int64_t id, int32_t date, int32_t generic) {
  std::ostringstream out;
  out << id << ',' << date << ",P," << generic << ',' << generic + 5000 << ',' << 1 << ",\n";
  return out.str();
}

std::string dx(int64_t id, int32_t date, int32_t code) {
  std::ostringstream out;
  out << id << ',' << date << ",D," << code << ",,,\n";
  return out.str();
}

// Independent re-implementation of the greedy matcher: linear scan over all
// patients per case, no sorted candidate index.
Cohort brute_force_greedy(const EventStore& store, const PatientTable& patients,
                          int32_t generic, int tolerance) {
  Cohort cohort;
  cohort.generic = generic;
  std::set<int64_t> used;
  for (const FirstPrescription& fp : first_prescriptions(store, generic)) {
    const Patient& case_pt = patients.by_id(fp.patient_id);
    used.insert(case_pt.id);  // a case can never double as this cohort's control
    int64_t best_id = -1;
    int32_t best_diff = 0;
    for (const Patient& cand : patients.rows) {
      if (used.count(cand.id)) continue;
      if (cand.sex != case_pt.sex) continue;
      if (store.ever_prescribed(patients.index_of(cand.id), generic)) continue;
      const int32_t diff = std::abs(cand.dob - case_pt.dob);
      if (diff > tolerance) continue;
      if (cand.last_contact < fp.index_date) continue;
      if (best_id < 0 || diff < best_diff || (diff == best_diff && cand.id < best_id)) {
        best_id = cand.id;
        best_diff = diff;
      }
    }
    if (best_id < 0) {
      ++cohort.n_unmatched;
      continue;
    }
    used.insert(best_id);
    cohort.pairs.push_back(CasePair{generic, case_pt.id, best_id, fp.index_date});
  }
  return cohort;
}

// Random small population with one focal generic prescribed to ~1/3 of
// patients and enough diagnosis padding that nobody is cleaned away.
std::pair<PatientTable, EventStore> random_population(uint64_t seed, int32_t generic) {
  Rng rng(seed);
  const int n = 30 + int(rng.below(60));
  std::ostringstream pcsv, ecsv;
  pcsv << kPatientsHeader;
  ecsv << kEventsHeader;
  for (int i = 1; i <= n; ++i) {
    const int32_t dob = int32_t(rng.below(2000));
    pcsv << i << ',' << (rng.bernoulli(0.5) ? 'M' : 'F') << ',' << dob << '\n';
    const int32_t last = dob + 200 + int32_t(rng.below(3000));
    ecsv << dx(i, dob + int32_t(rng.below(100)), 1 + int32_t(rng.below(20)));
    ecsv << dx(i, last, 1 + int32_t(rng.below(20)));
    if (rng.bernoulli(0.35)) {
      const int32_t rx_date = dob + 100 + int32_t(rng.below(uint64_t(last - dob - 100)));
      ecsv << rx(i, rx_date, generic);
      if (rng.bernoulli(0.3)) ecsv << rx(i, rx_date + int32_t(rng.below(200)), generic);
    }
  }
  return store_from(pcsv.str(), ecsv.str());
}

}  // namespace

TEST_CASE("clean_patients applies both minimums") {
  // p1: no events. p2: exactly 4 dx on 2 dates. p3: 10 dx all on one date.
  std::string events = kEventsHeader;
  events += dx(2, 100, 1) + dx(2, 100, 2) + dx(2, 100, 3) + dx(2, 150, 4);
  for (int i = 0; i < 10; ++i) events += dx(3, 300, 5);
  auto [patients, store] = store_from(kPatientsHeader + "1,M,0\n2,F,0\n3,M,0\n", events);

  auto [clean_pt, clean_store] = clean_patients(patients, store, 4, 2);
  REQUIRE(clean_pt.size() == 1);
  CHECK(clean_pt.rows[0].id == 2);  // boundary inclusive: exactly 4 dx / 2 dates passes
  CHECK(clean_store.by_patient.size() == 1);
  CHECK(clean_store.by_patient[0].size() == 4);
}

TEST_CASE("clean_patients matches a brute-force rule check") {
  SynthConfig config;
  config.n_patients = 120;
  config.background_rate = 1.0;  // sparse records: the rules actually bite
  SynthOutput out = generate(config, 61);
  auto [clean_pt, clean_store] = clean_patients(out.patients, out.store, 4, 2);

  std::set<int64_t> expected;
  for (size_t p = 0; p < out.patients.size(); ++p) {
    int n_dx = 0;
    std::set<int32_t> dates;
    for (const Event& e : out.store.by_patient[p]) {
      n_dx += e.kind == EventKind::Diagnosis;
      dates.insert(e.date);
    }
    if (n_dx >= 4 && int(dates.size()) >= 2) expected.insert(out.patients.rows[p].id);
  }
  std::set<int64_t> got;
  for (const Patient& p : clean_pt.rows) got.insert(p.id);
  CHECK(got == expected);
  CHECK(got.size() < out.patients.size());  // the filter removed someone
}

TEST_CASE("eligible_generics uses an inclusive threshold and ascending order") {
  std::string events = kEventsHeader;
  for (int i = 1; i <= 12; ++i) events += rx(i, 100, 7);
  for (int i = 1; i <= 3; ++i) events += rx(i, 120, 4);
  std::string patients_csv = kPatientsHeader;
  for (int i = 1; i <= 12; ++i) patients_csv += std::to_string(i) + ",M,0\n";
  auto [patients, store] = store_from(patients_csv, events);

  CHECK(eligible_generics(store, 10) == std::vector<int32_t>{7});
  CHECK(eligible_generics(store, 12) == std::vector<int32_t>{7});  // inclusive at ==
  CHECK(eligible_generics(store, 13) == std::vector<int32_t>{});
  CHECK(eligible_generics(store, 3) == std::vector<int32_t>{4, 7});  // ascending
}

TEST_CASE("match_controls picks the nearest dob and breaks ties to lower id") {
  // Case 1 (dob 1000) with candidates: id 5 diff 17, id 3 diff 3.
  std::string patients_csv = kPatientsHeader + "1,M,1000\n5,M,1017\n3,M,1003\n";
  std::string events = kEventsHeader + dx(1, 1100, 1) + rx(1, 1500, 9) + dx(5, 1600, 1) +
                       dx(3, 1600, 1);
  {
    auto [patients, store] = store_from(patients_csv, events);
    Cohort cohort = match_controls(store, patients, 9, 30);
    REQUIRE(cohort.pairs.size() == 1);
    CHECK(cohort.pairs[0].control_id == 3);  // argmin |dob diff|
    CHECK(cohort.pairs[0].index_date == 1500);
  }
  {
    // Equal diffs: ids 5 and 3 both 10 days away -> lower id wins.
    auto [patients, store] =
        store_from(kPatientsHeader + "1,M,1000\n5,M,1010\n3,M,990\n", events);
    Cohort cohort = match_controls(store, patients, 9, 30);
    REQUIRE(cohort.pairs.size() == 1);
    CHECK(cohort.pairs[0].control_id == 3);
  }
}

TEST_CASE("match_controls enforces each criterion") {
  const int32_t g = 9;
  // Sex mismatch.
  {
    auto [patients, store] = store_from(kPatientsHeader + "1,M,1000\n2,F,1000\n",
                                        kEventsHeader + rx(1, 1500, g) + dx(2, 1600, 1));
    Cohort cohort = match_controls(store, patients, g, 30);
    CHECK(cohort.pairs.empty());
    CHECK(cohort.n_unmatched == 1);
  }
  // Control prescribed the target generic at any time.
  {
    auto [patients, store] = store_from(kPatientsHeader + "1,M,1000\n2,M,1000\n",
                                        kEventsHeader + rx(1, 1500, g) + rx(2, 2000, g));
    CHECK(match_controls(store, patients, g, 30).pairs.empty());
  }
  // dob tolerance strict beyond 30 days.
  {
    auto [patients, store] = store_from(kPatientsHeader + "1,M,1000\n2,M,1031\n",
                                        kEventsHeader + rx(1, 1500, g) + dx(2, 1600, 1));
    CHECK(match_controls(store, patients, g, 30).pairs.empty());
  }
  {
    auto [patients, store] = store_from(kPatientsHeader + "1,M,1000\n2,M,1030\n",
                                        kEventsHeader + rx(1, 1500, g) + dx(2, 1600, 1));
    CHECK(match_controls(store, patients, g, 30).pairs.size() == 1);  // exactly 30 passes
  }
  // last_contact one day short of the index date.
  {
    auto [patients, store] = store_from(kPatientsHeader + "1,M,1000\n2,M,1000\n",
                                        kEventsHeader + rx(1, 1500, g) + dx(2, 1499, 1));
    Cohort cohort = match_controls(store, patients, g, 30);
    CHECK(cohort.pairs.empty());
    CHECK(cohort.n_unmatched == 1);
  }
  {
    auto [patients, store] = store_from(kPatientsHeader + "1,M,1000\n2,M,1000\n",
                                        kEventsHeader + rx(1, 1500, g) + dx(2, 1500, 1));
    CHECK(match_controls(store, patients, g, 30).pairs.size() == 1);  // boundary inclusive
  }
}

TEST_CASE("one-use rule: an earlier case consumes the shared best control") {
  const int32_t g = 9;
  // Cases 1 (idx 1500) and 2 (idx 1600); controls 10 (dob 1000) and 11 (dob 1020).
  auto [patients, store] = store_from(
      kPatientsHeader + "1,M,1000\n2,M,1000\n10,M,1000\n11,M,1020\n",
      kEventsHeader + rx(1, 1500, g) + rx(2, 1600, g) + dx(10, 1700, 1) + dx(11, 1700, 1));
  Cohort cohort = match_controls(store, patients, g, 30);
  REQUIRE(cohort.pairs.size() == 2);
  CHECK(cohort.pairs[0].case_id == 1);
  CHECK(cohort.pairs[0].control_id == 10);  // first case takes the exact-dob match
  CHECK(cohort.pairs[1].case_id == 2);
  CHECK(cohort.pairs[1].control_id == 11);
}

TEST_CASE("matching equals the brute-force greedy oracle on random stores") {
  const int32_t g = 77;
  for (uint64_t seed = 1; seed <= 40; ++seed) {
    auto [patients, store] = random_population(seed, g);
    Cohort fast = match_controls(store, patients, g, 30);
    Cohort slow = brute_force_greedy(store, patients, g, 30);
    CHECK(fast.pairs == slow.pairs);
    CHECK(fast.n_unmatched == slow.n_unmatched);
    verify_cohort(fast, store, patients, 30);
    CHECK(fast.pairs.size() + size_t(fast.n_unmatched) ==
          first_prescriptions(store, g).size());
  }
}

TEST_CASE("matching is invariant to patient storage order") {
  const int32_t g = 77;
  auto [patients, store] = random_population(5, g);

  // Rebuild the same population with patient rows reversed.
  std::ostringstream pcsv, ecsv;
  pcsv << kPatientsHeader;
  for (auto it = patients.rows.rbegin(); it != patients.rows.rend(); ++it)
    pcsv << it->id << ',' << (it->sex == Sex::M ? 'M' : 'F') << ',' << it->dob << '\n';
  write_events(ecsv, patients, store);  // writes its own header line
  std::string events_csv = ecsv.str();
  auto [patients2, store2] = store_from(pcsv.str(), events_csv);

  Cohort a = match_controls(store, patients, g, 30);
  Cohort b = match_controls(store2, patients2, g, 30);
  CHECK(a.pairs == b.pairs);
  CHECK(a.n_unmatched == b.n_unmatched);
}

TEST_CASE("verify_cohort rejects tampered pairs") {
  const int32_t g = 9;
  auto [patients, store] = store_from(kPatientsHeader + "1,M,1000\n2,M,1000\n3,F,1000\n",
                                      kEventsHeader + rx(1, 1500, g) + dx(2, 1600, 1) +
                                          dx(3, 1600, 1));
  Cohort cohort = match_controls(store, patients, g, 30);
  REQUIRE(cohort.pairs.size() == 1);
  verify_cohort(cohort, store, patients, 30);

  Cohort bad = cohort;
  bad.pairs[0].control_id = 3;  // sex mismatch
  CHECK_THROWS_AS(verify_cohort(bad, store, patients, 30), std::runtime_error);

  bad = cohort;
  bad.pairs[0].control_id = bad.pairs[0].case_id;  // self-pairing
  CHECK_THROWS_AS(verify_cohort(bad, store, patients, 30), std::runtime_error);

  bad = cohort;
  bad.pairs[0].index_date += 1;  // not the first prescription date
  CHECK_THROWS_AS(verify_cohort(bad, store, patients, 30), std::runtime_error);

  bad = cohort;
  bad.pairs.push_back(bad.pairs[0]);  // duplicate use of both patients
  CHECK_THROWS_AS(verify_cohort(bad, store, patients, 30), std::runtime_error);
}

TEST_CASE("write_cohort_csv emits one row per pair") {
  const int32_t g = 9;
  auto [patients, store] = store_from(kPatientsHeader + "1,M,1000\n2,M,1000\n",
                                      kEventsHeader + rx(1, 1500, g) + dx(2, 1600, 1));
  Cohort cohort = match_controls(store, patients, g, 30);
  std::ostringstream out;
  write_cohort_csv(out, cohort);
  CHECK(out.str() == "case_id,control_id,index_date\n1,2,1500\n");
}

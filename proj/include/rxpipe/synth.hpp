#pragma once
// Seeded synthetic EHR populations with planted, time-localized predictive
// signal, plus the de-identification transforms (code remapping and
// per-patient date shifting) applied to shared data. Lets the pipeline be
// exercised end-to-end without any protected data.

#include <map>
#include <utility>

#include "rxpipe/ehr.hpp"

namespace rxpipe {

struct SynthConfig {
  int32_t n_patients = 2000;
  int32_t n_generics = 20;
  int32_t n_diagnosis_codes = 300;
  int32_t n_lab_codes = 60;
  int32_t years_span = 10;
  int32_t prodrome_days = 90;     // signal events cluster this close before the index date
  double signal_strength = 0.9;   // per-code probability that a case exhibits the signal
  double background_rate = 2.0;   // mean background events per patient-year

  void validate() const;  // throws std::invalid_argument
};

struct SignalCode {
  EventKind kind = EventKind::Diagnosis;
  int32_t code = 0;
  std::optional<Band> band;  // labs only

  friend bool operator==(const SignalCode&, const SignalCode&) = default;
};

// Which codes carry signal for each generic, and where their events were
// placed: uniformly in [index_date - prodrome_days, index_date - 1].
// Read by test oracles only, never by the modeling path.
struct GroundTruth {
  int32_t prodrome_days = 0;
  std::map<int32_t, std::vector<SignalCode>> signals_by_generic;
};

struct SynthOutput {
  PatientTable patients;
  EventStore store;
  GroundTruth truth;
};

SynthOutput generate(const SynthConfig& config, uint64_t seed);

enum class CodeSpace : uint8_t { Diagnosis, Lab, Vital, Visit, Generic, Brand, Class };

// Seeded random bijection from every distinct (space, code) onto a fresh
// integer range, recorded so tests can invert it.
struct CodeMap {
  std::map<std::pair<CodeSpace, int32_t>, int32_t> forward;
  std::map<int32_t, std::pair<CodeSpace, int32_t>> inverse;

  int32_t map(CodeSpace space, int32_t code) const;
};

struct DeidOutput {
  PatientTable patients;
  EventStore store;
  CodeMap codemap;
};

// Remaps every code through a seeded bijection and shifts each patient's
// dates (dob and all events) by a per-patient uniform offset in [-365, +365],
// preserving all intra-patient intervals.
DeidOutput deidentify(const PatientTable& patients, const EventStore& store, uint64_t seed);

GroundTruth remap_truth(const GroundTruth& truth, const CodeMap& codemap);

// Maps a continuous measurement to its reference-range band; boundaries are
// inclusive to Within.
Band band_continuous(double value, double ref_low, double ref_high);

std::string groundtruth_json(const GroundTruth& truth);
std::string codemap_json(const CodeMap& codemap);

}  // namespace rxpipe

#pragma once
// De-identified EHR data model: patients, coded timestamped events, and an
// immutable event store indexed by generic drug code. Dates are integer day
// offsets from an arbitrary epoch; drug identity is a three-level code
// (generic / brand / class) and the pipeline keys on the generic level.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace rxpipe {

enum class Sex : uint8_t { M, F };

enum class EventKind : uint8_t { Diagnosis, Prescription, Lab, Vital, Visit };

// Normalized reference-range band for continuous measurements.
enum class Band : int8_t { Below = -1, Within = 0, Above = 1 };

struct Patient {
  int64_t id = 0;
  Sex sex = Sex::M;
  int32_t dob = 0;
  int32_t last_contact = 0;  // max event date; recomputed, never read from input

  friend bool operator==(const Patient&, const Patient&) = default;
};

struct Event {
  int64_t patient_id = 0;
  int32_t date = 0;
  EventKind kind = EventKind::Diagnosis;
  int32_t code = 0;                   // generic code for prescriptions
  std::optional<int32_t> brand_code;  // prescriptions only
  std::optional<int32_t> class_code;  // prescriptions only
  std::optional<Band> band;           // labs and vitals only

  friend bool operator==(const Event&, const Event&) = default;
};

struct PatientTable {
  std::vector<Patient> rows;
  std::unordered_map<int64_t, int32_t> index_by_id;

  int32_t index_of(int64_t id) const {
    auto it = index_by_id.find(id);
    return it == index_by_id.end() ? -1 : it->second;
  }
  const Patient& by_id(int64_t id) const;
  size_t size() const { return rows.size(); }

  friend bool operator==(const PatientTable& a, const PatientTable& b) {
    return a.rows == b.rows;
  }
};

// Per-patient event sequences sorted ascending by date (ties keep input
// order), plus an index from generic code to the patients ever prescribed it.
// Immutable after construction; safe for concurrent reads.
struct EventStore {
  std::vector<std::vector<Event>> by_patient;  // aligned with PatientTable.rows
  std::unordered_map<int32_t, std::vector<int32_t>> patients_by_generic;  // sorted indices

  const std::vector<Event>& events_of(int32_t patient_index) const {
    return by_patient[patient_index];
  }
  bool ever_prescribed(int32_t patient_index, int32_t generic) const;
  size_t total_events() const;

  friend bool operator==(const EventStore& a, const EventStore& b) {
    return a.by_patient == b.by_patient;
  }
};

struct FirstPrescription {
  int64_t patient_id = 0;
  int32_t index_date = 0;

  friend bool operator==(const FirstPrescription&, const FirstPrescription&) = default;
};

// Parses the patients file (header `patient_id,sex,dob`). last_contact is
// initialized to dob and finalized by parse_events. Malformed rows raise
// std::runtime_error naming the offending physical line.
PatientTable parse_patients(std::istream& in);

// Parses the events file (header
// `patient_id,date,kind,code,brand_code,class_code,band`, kind in
// {D,P,L,V,S}), updates patients' last_contact, and builds the generic index.
EventStore parse_events(std::istream& in, PatientTable& patients);

void write_patients(std::ostream& out, const PatientTable& patients);
void write_events(std::ostream& out, const PatientTable& patients, const EventStore& store);

// One entry per patient ever prescribed this generic, index_date = earliest
// prescription date, sorted ascending by (index_date, patient_id). Unknown
// generics yield an empty sequence.
std::vector<FirstPrescription> first_prescriptions(const EventStore& store, int32_t generic);

// Rebuilds derived state from raw per-patient event vectors: sorts each
// sequence by date (stable), recomputes last_contact, regenerates the generic
// index. Shared by the parser, the synthetic generator and cleaning.
EventStore finalize_store(std::vector<std::vector<Event>> by_patient, PatientTable& patients);

char kind_token(EventKind kind);
std::string band_token(Band band);

}  // namespace rxpipe

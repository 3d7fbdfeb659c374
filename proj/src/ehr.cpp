#include "rxpipe/ehr.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace rxpipe {

namespace {

std::runtime_error parse_error(const std::string& what, size_t line) {
  return std::runtime_error(what + " at line " + std::to_string(line));
}

// Splits a CSV line in place; the formats are all-numeric so no quoting rules
// apply. Returns one field per separator gap, empty fields included.
std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

int64_t parse_int(std::string_view field, const char* what, size_t line) {
  int64_t value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw parse_error(std::string("bad ") + what, line);
  return value;
}

bool next_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

}  // namespace

const Patient& PatientTable::by_id(int64_t id) const {
  int32_t idx = index_of(id);
  if (idx < 0) throw std::runtime_error("unknown patient_id " + std::to_string(id));
  return rows[idx];
}

bool EventStore::ever_prescribed(int32_t patient_index, int32_t generic) const {
  auto it = patients_by_generic.find(generic);
  if (it == patients_by_generic.end()) return false;
  return std::binary_search(it->second.begin(), it->second.end(), patient_index);
}

size_t EventStore::total_events() const {
  size_t n = 0;
  for (const auto& v : by_patient) n += v.size();
  return n;
}

PatientTable parse_patients(std::istream& in) {
  PatientTable table;
  std::string line;
  size_t lineno = 0;
  if (!next_line(in, line)) throw std::runtime_error("patients: empty input");
  ++lineno;
  if (line != "patient_id,sex,dob")
    throw parse_error("bad patients header", lineno);
  while (next_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != 3) throw parse_error("bad column count", lineno);
    Patient p;
    p.id = parse_int(fields[0], "patient_id", lineno);
    if (p.id <= 0) throw parse_error("bad patient_id", lineno);
    if (fields[1] == "M")
      p.sex = Sex::M;
    else if (fields[1] == "F")
      p.sex = Sex::F;
    else
      throw parse_error("unknown sex", lineno);
    p.dob = static_cast<int32_t>(parse_int(fields[2], "dob", lineno));
    p.last_contact = p.dob;
    if (table.index_by_id.count(p.id)) throw parse_error("duplicate patient_id", lineno);
    table.index_by_id.emplace(p.id, static_cast<int32_t>(table.rows.size()));
    table.rows.push_back(p);
  }
  return table;
}

EventStore parse_events(std::istream& in, PatientTable& patients) {
  std::vector<std::vector<Event>> by_patient(patients.size());
  std::string line;
  size_t lineno = 0;
  if (!next_line(in, line)) throw std::runtime_error("events: empty input");
  ++lineno;
  if (line != "patient_id,date,kind,code,brand_code,class_code,band")
    throw parse_error("bad events header", lineno);
  while (next_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != 7) throw parse_error("bad column count", lineno);
    Event e;
    e.patient_id = parse_int(fields[0], "patient_id", lineno);
    int32_t pidx = patients.index_of(e.patient_id);
    if (pidx < 0) throw parse_error("unknown patient_id", lineno);
    e.date = static_cast<int32_t>(parse_int(fields[1], "date", lineno));
    if (e.date < patients.rows[pidx].dob) throw parse_error("event date before dob", lineno);
    if (fields[2].size() != 1) throw parse_error("unknown kind", lineno);
    switch (fields[2][0]) {
      case 'D': e.kind = EventKind::Diagnosis; break;
      case 'P': e.kind = EventKind::Prescription; break;
      case 'L': e.kind = EventKind::Lab; break;
      case 'V': e.kind = EventKind::Vital; break;
      case 'S': e.kind = EventKind::Visit; break;
      default: throw parse_error("unknown kind", lineno);
    }
    e.code = static_cast<int32_t>(parse_int(fields[3], "code", lineno));
    if (e.code <= 0) throw parse_error("bad code", lineno);
    if (e.kind == EventKind::Prescription) {
      if (fields[4].empty() || fields[5].empty())
        throw parse_error("prescription missing brand/class codes", lineno);
      e.brand_code = static_cast<int32_t>(parse_int(fields[4], "brand_code", lineno));
      e.class_code = static_cast<int32_t>(parse_int(fields[5], "class_code", lineno));
    } else if (!fields[4].empty() || !fields[5].empty()) {
      throw parse_error("unexpected brand/class codes", lineno);
    }
    if (e.kind == EventKind::Lab || e.kind == EventKind::Vital) {
      if (fields[6].empty()) throw parse_error("lab/vital missing band", lineno);
      if (fields[6] == "-1")
        e.band = Band::Below;
      else if (fields[6] == "0")
        e.band = Band::Within;
      else if (fields[6] == "+1" || fields[6] == "1")
        e.band = Band::Above;
      else
        throw parse_error("bad band", lineno);
    } else if (!fields[6].empty()) {
      throw parse_error("unexpected band", lineno);
    }
    by_patient[pidx].push_back(e);
  }
  return finalize_store(std::move(by_patient), patients);
}

EventStore finalize_store(std::vector<std::vector<Event>> by_patient, PatientTable& patients) {
  EventStore store;
  store.by_patient = std::move(by_patient);
  for (size_t i = 0; i < store.by_patient.size(); ++i) {
    auto& events = store.by_patient[i];
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.date < b.date; });
    Patient& p = patients.rows[i];
    p.last_contact = p.dob;
    for (const Event& e : events) {
      p.last_contact = std::max(p.last_contact, e.date);
      if (e.kind == EventKind::Prescription) {
        auto& v = store.patients_by_generic[e.code];
        if (v.empty() || v.back() != static_cast<int32_t>(i))
          v.push_back(static_cast<int32_t>(i));
      }
    }
  }
  // Patients are processed in index order, so each generic's list is already
  // sorted ascending with no duplicates.
  return store;
}

char kind_token(EventKind kind) {
  switch (kind) {
    case EventKind::Diagnosis: return 'D';
    case EventKind::Prescription: return 'P';
    case EventKind::Lab: return 'L';
    case EventKind::Vital: return 'V';
    case EventKind::Visit: return 'S';
  }
  throw std::logic_error("bad kind");
}

std::string band_token(Band band) {
  switch (band) {
    case Band::Below: return "-1";
    case Band::Within: return "0";
    case Band::Above: return "+1";
  }
  throw std::logic_error("bad band");
}

void write_patients(std::ostream& out, const PatientTable& patients) {
  out << "patient_id,sex,dob\n";
  for (const Patient& p : patients.rows)
    out << p.id << ',' << (p.sex == Sex::M ? 'M' : 'F') << ',' << p.dob << '\n';
}

void write_events(std::ostream& out, const PatientTable& patients, const EventStore& store) {
  out << "patient_id,date,kind,code,brand_code,class_code,band\n";
  for (size_t i = 0; i < patients.size(); ++i) {
    for (const Event& e : store.by_patient[i]) {
      out << e.patient_id << ',' << e.date << ',' << kind_token(e.kind) << ',' << e.code << ',';
      if (e.brand_code) out << *e.brand_code;
      out << ',';
      if (e.class_code) out << *e.class_code;
      out << ',';
      if (e.band) out << band_token(*e.band);
      out << '\n';
    }
  }
}

std::vector<FirstPrescription> first_prescriptions(const EventStore& store, int32_t generic) {
  std::vector<FirstPrescription> out;
  auto it = store.patients_by_generic.find(generic);
  if (it == store.patients_by_generic.end()) return out;
  out.reserve(it->second.size());
  for (int32_t pidx : it->second) {
    FirstPrescription fp;
    fp.index_date = INT32_MAX;
    for (const Event& e : store.by_patient[pidx]) {
      if (e.kind == EventKind::Prescription && e.code == generic) {
        fp.patient_id = e.patient_id;
        fp.index_date = std::min(fp.index_date, e.date);
      }
    }
    out.push_back(fp);
  }
  std::sort(out.begin(), out.end(), [](const FirstPrescription& a, const FirstPrescription& b) {
    return a.index_date != b.index_date ? a.index_date < b.index_date
                                        : a.patient_id < b.patient_id;
  });
  return out;
}

}  // namespace rxpipe

#include "rxpipe/synth.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "rxpipe/rng.hpp"

namespace rxpipe {

namespace {

// Stream labels for deriving independent per-entity RNG streams.
constexpr uint64_t kDemographics = 1;
constexpr uint64_t kSignalTables = 2;
constexpr uint64_t kCases = 3;
constexpr uint64_t kBackground = 4;
constexpr uint64_t kCodeMap = 10;
constexpr uint64_t kDateShift = 11;

constexpr int kSignalDxPerGeneric = 3;
constexpr int kSignalLabPerGeneric = 2;
constexpr int kVisitDeptCodes = 8;

// All synthetic labs/vitals share one reference range; only the band is
// retained after normalization, so the scale is arbitrary.
constexpr double kRefLow = 40.0;
constexpr double kRefHigh = 60.0;

int32_t brand_of(const SynthConfig& c, int32_t generic) { return c.n_generics + generic; }
int32_t class_of(const SynthConfig& c, int32_t generic) {
  return generic % std::max(1, c.n_generics / 4) + 1;
}

Event make_lab(int64_t patient_id, int32_t date, EventKind kind, int32_t code, double value) {
  Event e;
  e.patient_id = patient_id;
  e.date = date;
  e.kind = kind;
  e.code = code;
  e.band = band_continuous(value, kRefLow, kRefHigh);
  return e;
}

}  // namespace

void SynthConfig::validate() const {
  auto positive = [](int32_t v, const char* what) {
    if (v < 1) throw std::invalid_argument(std::string("SynthConfig: ") + what + " must be >= 1");
  };
  positive(n_patients, "n_patients");
  positive(n_generics, "n_generics");
  positive(n_diagnosis_codes, "n_diagnosis_codes");
  positive(n_lab_codes, "n_lab_codes");
  positive(years_span, "years_span");
  positive(prodrome_days, "prodrome_days");
  if (signal_strength < 0.0 || signal_strength > 1.0)
    throw std::invalid_argument("SynthConfig: signal_strength must be in [0,1]");
  if (background_rate < 0.0)
    throw std::invalid_argument("SynthConfig: background_rate must be >= 0");
}

Band band_continuous(double value, double ref_low, double ref_high) {
  if (ref_low >= ref_high)
    throw std::invalid_argument("band_continuous: ref_low must be < ref_high");
  if (value < ref_low) return Band::Below;
  if (value > ref_high) return Band::Above;
  return Band::Within;
}

SynthOutput generate(const SynthConfig& config, uint64_t seed) {
  config.validate();
  const int32_t span = config.years_span * 365;
  const int32_t horizon = span + 365;

  SynthOutput out;
  out.truth.prodrome_days = config.prodrome_days;

  // Demographics: sexes ~50/50, dobs spread over the configured span.
  out.patients.rows.reserve(config.n_patients);
  for (int32_t i = 0; i < config.n_patients; ++i) {
    Rng rng(mix_seed(mix_seed(seed, kDemographics), i));
    Patient p;
    p.id = i + 1;
    p.sex = rng.bernoulli(0.5) ? Sex::F : Sex::M;
    p.dob = static_cast<int32_t>(rng.below(span));
    p.last_contact = p.dob;
    out.patients.index_by_id.emplace(p.id, i);
    out.patients.rows.push_back(p);
  }

  // Signal code assignment: global shuffles of the code universes, carved
  // into per-generic slices so generics collide only when the universe is
  // too small to keep them disjoint.
  std::vector<int32_t> dx_codes(config.n_diagnosis_codes);
  std::iota(dx_codes.begin(), dx_codes.end(), 1);
  std::vector<int32_t> lab_codes(config.n_lab_codes);
  std::iota(lab_codes.begin(), lab_codes.end(), 1);
  {
    Rng rng(mix_seed(seed, kSignalTables));
    rng.shuffle(dx_codes);
    rng.shuffle(lab_codes);
    for (int32_t g = 1; g <= config.n_generics; ++g) {
      std::vector<SignalCode>& signals = out.truth.signals_by_generic[g];
      for (int j = 0; j < kSignalDxPerGeneric; ++j) {
        SignalCode s;
        s.kind = EventKind::Diagnosis;
        s.code = dx_codes[((g - 1) * kSignalDxPerGeneric + j) % dx_codes.size()];
        signals.push_back(s);
      }
      for (int j = 0; j < kSignalLabPerGeneric; ++j) {
        SignalCode s;
        s.kind = EventKind::Lab;
        s.code = lab_codes[((g - 1) * kSignalLabPerGeneric + j) % lab_codes.size()];
        s.band = rng.bernoulli(0.5) ? Band::Above : Band::Below;
        signals.push_back(s);
      }
    }
  }

  std::vector<std::vector<Event>> by_patient(config.n_patients);

  // Case selection and signal placement. Cases are drawn without replacement
  // within one generic; a patient can be a case for several generics.
  const int32_t cases_per_generic =
      std::max<int32_t>(1, config.n_patients / (2 * config.n_generics));
  std::vector<int32_t> draw(config.n_patients);
  for (int32_t g = 1; g <= config.n_generics; ++g) {
    Rng rng(mix_seed(mix_seed(seed, kCases), g));
    std::iota(draw.begin(), draw.end(), 0);
    for (int32_t c = 0; c < cases_per_generic; ++c) {
      std::swap(draw[c], draw[c + rng.below(draw.size() - c)]);
      const int32_t pidx = draw[c];
      const Patient& p = out.patients.rows[pidx];
      const int64_t lo = int64_t{p.dob} + config.prodrome_days;
      const int64_t hi = std::max<int64_t>(lo, horizon - 180);
      const int32_t index_date = static_cast<int32_t>(rng.range(lo, hi));

      Event rx;
      rx.patient_id = p.id;
      rx.date = index_date;
      rx.kind = EventKind::Prescription;
      rx.code = g;
      rx.brand_code = brand_of(config, g);
      rx.class_code = class_of(config, g);
      by_patient[pidx].push_back(rx);
      const int64_t refills = rng.below(3);
      for (int64_t r = 0; r < refills; ++r) {
        Event refill = rx;
        refill.date = static_cast<int32_t>(
            rng.range(index_date + 1, std::max<int64_t>(index_date + 1, horizon)));
        by_patient[pidx].push_back(refill);
      }

      // Signal events land strictly before the index date, inside the
      // prodrome window.
      for (const SignalCode& s : out.truth.signals_by_generic[g]) {
        if (!rng.bernoulli(config.signal_strength)) continue;
        const int32_t date = static_cast<int32_t>(
            rng.range(index_date - config.prodrome_days, index_date - 1));
        if (s.kind == EventKind::Diagnosis) {
          Event e;
          e.patient_id = p.id;
          e.date = date;
          e.kind = EventKind::Diagnosis;
          e.code = s.code;
          by_patient[pidx].push_back(e);
        } else {
          const double value = *s.band == Band::Above ? kRefHigh + 1.0 + rng.uniform() * 20.0
                                                      : kRefLow - 1.0 - rng.uniform() * 20.0;
          by_patient[pidx].push_back(make_lab(p.id, date, EventKind::Lab, s.code, value));
        }
      }
    }
  }

  // Background events: uniform over each patient's lifespan, kinds mixed.
  for (int32_t i = 0; i < config.n_patients; ++i) {
    Rng rng(mix_seed(mix_seed(seed, kBackground), i));
    const Patient& p = out.patients.rows[i];
    const double years_alive = double(horizon - p.dob) / 365.0;
    const int64_t count = rng.poisson(config.background_rate * years_alive);
    for (int64_t k = 0; k < count; ++k) {
      const int32_t date = static_cast<int32_t>(rng.range(p.dob, horizon));
      const double u = rng.uniform();
      if (u < 0.50) {
        Event e;
        e.patient_id = p.id;
        e.date = date;
        e.kind = EventKind::Diagnosis;
        e.code = static_cast<int32_t>(1 + rng.below(config.n_diagnosis_codes));
        by_patient[i].push_back(e);
      } else if (u < 0.85) {
        const EventKind kind = u < 0.70 ? EventKind::Lab : EventKind::Vital;
        const int32_t code = static_cast<int32_t>(1 + rng.below(config.n_lab_codes));
        const double value = 30.0 + rng.uniform() * 40.0;
        by_patient[i].push_back(make_lab(p.id, date, kind, code, value));
      } else {
        Event e;
        e.patient_id = p.id;
        e.date = date;
        e.kind = EventKind::Visit;
        e.code = static_cast<int32_t>(1 + rng.below(kVisitDeptCodes));
        by_patient[i].push_back(e);
      }
    }
  }

  out.store = finalize_store(std::move(by_patient), out.patients);
  return out;
}

int32_t CodeMap::map(CodeSpace space, int32_t code) const {
  auto it = forward.find({space, code});
  if (it == forward.end()) throw std::runtime_error("CodeMap: unmapped code");
  return it->second;
}

namespace {

CodeSpace space_of(const Event& e) {
  switch (e.kind) {
    case EventKind::Diagnosis: return CodeSpace::Diagnosis;
    case EventKind::Lab: return CodeSpace::Lab;
    case EventKind::Vital: return CodeSpace::Vital;
    case EventKind::Visit: return CodeSpace::Visit;
    case EventKind::Prescription: return CodeSpace::Generic;
  }
  throw std::logic_error("bad kind");
}

const char* space_token(CodeSpace space) {
  switch (space) {
    case CodeSpace::Diagnosis: return "diagnosis";
    case CodeSpace::Lab: return "lab";
    case CodeSpace::Vital: return "vital";
    case CodeSpace::Visit: return "visit";
    case CodeSpace::Generic: return "generic";
    case CodeSpace::Brand: return "brand";
    case CodeSpace::Class: return "class";
  }
  throw std::logic_error("bad space");
}

}  // namespace

DeidOutput deidentify(const PatientTable& patients, const EventStore& store, uint64_t seed) {
  DeidOutput out;

  // Enumerate every distinct (space, code) in deterministic order.
  std::map<std::pair<CodeSpace, int32_t>, int32_t> forward;
  for (const auto& events : store.by_patient) {
    for (const Event& e : events) {
      forward.emplace(std::pair{space_of(e), e.code}, 0);
      if (e.brand_code) forward.emplace(std::pair{CodeSpace::Brand, *e.brand_code}, 0);
      if (e.class_code) forward.emplace(std::pair{CodeSpace::Class, *e.class_code}, 0);
    }
  }

  // Assign a shuffled fresh range, disjoint from any plausible input code.
  constexpr int32_t kFreshBase = 1000001;
  std::vector<int32_t> fresh(forward.size());
  std::iota(fresh.begin(), fresh.end(), kFreshBase);
  Rng rng(mix_seed(seed, kCodeMap));
  rng.shuffle(fresh);
  size_t slot = 0;
  for (auto& [key, mapped] : forward) {
    mapped = fresh[slot++];
    out.codemap.inverse.emplace(mapped, key);
  }
  out.codemap.forward = std::move(forward);

  out.patients = patients;
  std::vector<std::vector<Event>> by_patient(store.by_patient.size());
  for (size_t i = 0; i < store.by_patient.size(); ++i) {
    Rng shift_rng(mix_seed(mix_seed(seed, kDateShift), i));
    const int32_t offset = static_cast<int32_t>(shift_rng.range(-365, 365));
    out.patients.rows[i].dob += offset;
    by_patient[i].reserve(store.by_patient[i].size());
    for (Event e : store.by_patient[i]) {
      e.date += offset;
      e.code = out.codemap.map(space_of(e), e.code);
      if (e.brand_code) e.brand_code = out.codemap.map(CodeSpace::Brand, *e.brand_code);
      if (e.class_code) e.class_code = out.codemap.map(CodeSpace::Class, *e.class_code);
      by_patient[i].push_back(e);
    }
  }
  out.store = finalize_store(std::move(by_patient), out.patients);
  return out;
}

GroundTruth remap_truth(const GroundTruth& truth, const CodeMap& codemap) {
  GroundTruth out;
  out.prodrome_days = truth.prodrome_days;
  for (const auto& [generic, signals] : truth.signals_by_generic) {
    // A generic with no surviving prescriptions has no mapping; keep it out.
    auto it = codemap.forward.find({CodeSpace::Generic, generic});
    if (it == codemap.forward.end()) continue;
    std::vector<SignalCode> mapped;
    for (SignalCode s : signals) {
      const CodeSpace space =
          s.kind == EventKind::Diagnosis ? CodeSpace::Diagnosis : CodeSpace::Lab;
      auto cit = codemap.forward.find({space, s.code});
      // Signal codes that never materialized in any event (low signal
      // strength) have no de-identified alias; drop them from the oracle.
      if (cit == codemap.forward.end()) continue;
      s.code = cit->second;
      mapped.push_back(s);
    }
    out.signals_by_generic.emplace(it->second, std::move(mapped));
  }
  return out;
}

std::string groundtruth_json(const GroundTruth& truth) {
  nlohmann::ordered_json root;
  root["prodrome_days"] = truth.prodrome_days;
  auto& generics = root["generics"] = nlohmann::ordered_json::array();
  for (const auto& [generic, signals] : truth.signals_by_generic) {
    nlohmann::ordered_json entry;
    entry["generic"] = generic;
    auto& arr = entry["signals"] = nlohmann::ordered_json::array();
    for (const SignalCode& s : signals) {
      nlohmann::ordered_json sc;
      sc["kind"] = std::string(1, kind_token(s.kind));
      sc["code"] = s.code;
      if (s.band) sc["band"] = band_token(*s.band);
      arr.push_back(std::move(sc));
    }
    generics.push_back(std::move(entry));
  }
  return root.dump(2) + "\n";
}

std::string codemap_json(const CodeMap& codemap) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& [key, mapped] : codemap.forward) {
    nlohmann::ordered_json entry;
    entry["space"] = space_token(key.first);
    entry["code"] = key.second;
    entry["mapped"] = mapped;
    arr.push_back(std::move(entry));
  }
  return arr.dump(2) + "\n";
}

}  // namespace rxpipe

#include "rxpipe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "rxpipe/rng.hpp"
#include "rxpipe/tabulate.hpp"

namespace rxpipe {

namespace {

constexpr const char* kManifestName = "manifest.jsonl";

// Sub-stream labels inside one job's seed space.
constexpr uint64_t kSeedFolds = 1;
constexpr uint64_t kSeedForest = 2;

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

std::string u64_hex(uint64_t v) {
  char buf[17];
  auto [p, ec] = std::to_chars(buf, buf + 16, v, 16);
  (void)ec;
  return std::string(buf, p);
}

uint64_t u64_from_hex(const std::string& s) {
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("malformed manifest: bad hex field");
  return v;
}

const char* status_token(JobStatus s) {
  switch (s) {
    case JobStatus::Pending: return "pending";
    case JobStatus::Done: return "done";
    case JobStatus::Skipped: return "skipped";
    case JobStatus::Failed: return "failed";
  }
  return "pending";
}

JobStatus status_from_token(const std::string& s) {
  if (s == "pending") return JobStatus::Pending;
  if (s == "done") return JobStatus::Done;
  if (s == "skipped") return JobStatus::Skipped;
  if (s == "failed") return JobStatus::Failed;
  throw std::runtime_error("malformed manifest: unknown status '" + s + "'");
}

nlohmann::ordered_json result_to_json(const ModelResult& r) {
  return {{"generic", r.generic},
          {"window_days", r.window_days},
          {"n_pairs", r.n_pairs},
          {"n_features", r.n_features_postfilter},
          {"fold_aucs", r.fold_aucs},
          {"mean_auc", r.mean_auc},
          {"std_auc", r.std_auc}};
}

ModelResult result_from_json(const nlohmann::json& j) {
  ModelResult r;
  r.generic = j.at("generic").get<int32_t>();
  r.window_days = j.at("window_days").get<int32_t>();
  r.n_pairs = j.at("n_pairs").get<int32_t>();
  r.n_features_postfilter = j.at("n_features").get<int32_t>();
  r.fold_aucs = j.at("fold_aucs").get<std::vector<double>>();
  r.mean_auc = j.at("mean_auc").get<double>();
  r.std_auc = j.at("std_auc").get<double>();
  return r;
}

}  // namespace

void RunConfig::validate() const {
  if (patients_path.empty() || events_path.empty())
    throw std::invalid_argument("patients/events paths are required");
  if (out_dir.empty()) throw std::invalid_argument("output directory is required");
  if (windows.empty()) throw std::invalid_argument("windows must be non-empty");
  for (size_t i = 0; i < windows.size(); ++i) {
    if (windows[i] < 0) throw std::invalid_argument("windows must be non-negative");
    if (i > 0 && windows[i] <= windows[i - 1])
      throw std::invalid_argument("windows must be strictly increasing");
  }
  if (min_cases < 1) throw std::invalid_argument("min_cases must be positive");
  if (min_dx < 0 || min_visit_dates < 0)
    throw std::invalid_argument("cleaning thresholds must be non-negative");
  if (dob_tolerance_days < 0) throw std::invalid_argument("dob tolerance must be non-negative");
  if (prevalence_threshold < 0.0 || prevalence_threshold >= 1.0)
    throw std::invalid_argument("prevalence threshold must lie in [0, 1)");
  if (n_trees < 1) throw std::invalid_argument("n_trees must be positive");
  if (!(mtry_fraction > 0.0) || mtry_fraction > 1.0)
    throw std::invalid_argument("mtry_fraction must lie in (0, 1]");
  if (k_folds < 2) throw std::invalid_argument("k_folds must be at least 2");
  if (workers < 0) throw std::invalid_argument("workers must be non-negative");
}

uint64_t fnv1a64(std::string_view bytes, uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_canonical_json(const RunConfig& config) {
  nlohmann::ordered_json j;
  j["patients"] = config.patients_path;
  j["events"] = config.events_path;
  j["windows"] = config.windows;
  j["min_cases"] = config.min_cases;
  j["min_dx"] = config.min_dx;
  j["min_visit_dates"] = config.min_visit_dates;
  j["dob_tolerance_days"] = config.dob_tolerance_days;
  j["prevalence_threshold"] = config.prevalence_threshold;
  j["prevalence_mode"] =
      config.prevalence_mode == PrevalenceMode::Pooled ? "pooled" : "per_group";
  j["n_trees"] = config.n_trees;
  j["mtry_fraction"] = config.mtry_fraction;
  j["k_folds"] = config.k_folds;
  j["seed"] = u64_hex(config.seed);  // hex string: JSON numbers stop at 2^53
  j["flag_threshold"] = config.flag_threshold;
  return j.dump();
}

RunConfig config_from_canonical_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  RunConfig c;
  c.patients_path = j.at("patients").get<std::string>();
  c.events_path = j.at("events").get<std::string>();
  c.windows = j.at("windows").get<std::vector<int32_t>>();
  c.min_cases = j.at("min_cases").get<int32_t>();
  c.min_dx = j.at("min_dx").get<int32_t>();
  c.min_visit_dates = j.at("min_visit_dates").get<int32_t>();
  c.dob_tolerance_days = j.at("dob_tolerance_days").get<int32_t>();
  c.prevalence_threshold = j.at("prevalence_threshold").get<double>();
  const std::string mode = j.at("prevalence_mode").get<std::string>();
  if (mode == "pooled")
    c.prevalence_mode = PrevalenceMode::Pooled;
  else if (mode == "per_group")
    c.prevalence_mode = PrevalenceMode::PerGroup;
  else
    throw std::runtime_error("malformed manifest: unknown prevalence mode '" + mode + "'");
  c.n_trees = j.at("n_trees").get<int>();
  c.mtry_fraction = j.at("mtry_fraction").get<double>();
  c.k_folds = j.at("k_folds").get<int>();
  c.seed = u64_from_hex(j.at("seed").get<std::string>());
  c.flag_threshold = j.at("flag_threshold").get<double>();
  return c;
}

uint64_t config_fingerprint(const RunConfig& config) {
  return fnv1a64(config_canonical_json(config));
}

std::vector<Job> plan_jobs(const EventStore& store, const RunConfig& config) {
  const std::vector<int32_t> generics = eligible_generics(store, config.min_cases);
  if (generics.empty()) throw std::runtime_error("empty plan");
  std::vector<Job> jobs;
  jobs.reserve(generics.size() * config.windows.size());
  for (int32_t g : generics)
    for (int32_t w : config.windows) jobs.push_back(Job{g, w});
  return jobs;
}

uint64_t job_seed(uint64_t master_seed, int32_t generic, int32_t window_days) {
  return mix_seed(mix_seed(master_seed, uint64_t(generic)), uint64_t(window_days));
}

void run_single_job(Job& job, const EventStore& store, const PatientTable& patients,
                    const RunConfig& config) {
  try {
    Cohort cohort = match_controls(store, patients, job.generic, config.dob_tolerance_days);
    verify_cohort(cohort, store, patients, config.dob_tolerance_days);
    if (int(cohort.pairs.size()) < config.k_folds) {
      job.status = JobStatus::Skipped;
      job.note = "too few pairs";
      return;
    }
    if (!config.emit_cohorts_dir.empty()) {
      const auto path = std::filesystem::path(config.emit_cohorts_dir) /
                        ("cohort_g" + std::to_string(job.generic) + "_w" +
                         std::to_string(job.window_days) + ".csv");
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + path.string());
      write_cohort_csv(out, cohort);
    }

    FeatureMatrix matrix = build_table(cohort, store, patients, job.window_days);
    leakage_scan(matrix, cohort, store, patients, job.window_days, 0.01);
    FeatureMatrix filtered =
        prevalence_filter(matrix, config.prevalence_threshold, config.prevalence_mode);
    if (!config.emit_tables_dir.empty()) {
      const auto path = std::filesystem::path(config.emit_tables_dir) /
                        ("table_g" + std::to_string(job.generic) + "_w" +
                         std::to_string(job.window_days) + ".csv");
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + path.string());
      write_table_csv(out, filtered);
    }

    const uint64_t seed = job_seed(config.seed, job.generic, job.window_days);
    FoldPlan plan =
        make_folds(int32_t(cohort.pairs.size()), config.k_folds, mix_seed(seed, kSeedFolds));
    ForestParams params;
    params.n_trees = config.n_trees;
    params.mtry_fraction = config.mtry_fraction;
    params.seed = mix_seed(seed, kSeedForest);

    ModelResult result = cross_validate(filtered, filtered.labels, plan, params);
    result.generic = job.generic;
    result.window_days = job.window_days;
    job.result = std::move(result);
    job.status = JobStatus::Done;
    job.note.clear();
  } catch (const std::exception& e) {
    job.status = JobStatus::Failed;
    job.note = e.what();
    job.result.reset();
  }
}

std::string manifest_to_text(const Manifest& manifest) {
  std::string out;
  {
    nlohmann::ordered_json header;
    header["fingerprint"] = u64_hex(manifest.fingerprint);
    header["inputs_digest"] = u64_hex(manifest.inputs_digest);
    header["config"] = nlohmann::ordered_json::parse(manifest.config_json);
    out += header.dump();
    out += '\n';
  }
  for (const Job& job : manifest.jobs) {
    nlohmann::ordered_json line;
    line["generic"] = job.generic;
    line["window_days"] = job.window_days;
    line["status"] = status_token(job.status);
    if (!job.note.empty()) line["note"] = job.note;
    if (job.result) line["result"] = result_to_json(*job.result);
    out += line.dump();
    out += '\n';
  }
  {
    // Derived per-window rollup; informational, recomputed on every save.
    std::map<int32_t, std::pair<std::vector<double>, int>> per_window;  // means, skips
    for (const Job& job : manifest.jobs) {
      auto& slot = per_window[job.window_days];
      if (job.status == JobStatus::Done) slot.first.push_back(job.result->mean_auc);
      if (job.status == JobStatus::Skipped) ++slot.second;
    }
    nlohmann::ordered_json rows = nlohmann::json::array();
    for (const auto& [window, slot] : per_window) {
      nlohmann::ordered_json row;
      row["window_days"] = window;
      if (!slot.first.empty()) {
        double mean = 0.0;
        for (double m : slot.first) mean += m;
        mean /= double(slot.first.size());
        double var = 0.0;
        for (double m : slot.first) var += (m - mean) * (m - mean);
        var /= double(slot.first.size());
        row["mean_auc"] = mean;
        row["std_auc"] = std::sqrt(var);
      } else {
        row["mean_auc"] = nullptr;
        row["std_auc"] = nullptr;
      }
      row["n_models"] = slot.first.size();
      row["n_skipped"] = slot.second;
      rows.push_back(std::move(row));
    }
    nlohmann::ordered_json tail;
    tail["summaries"] = std::move(rows);
    out += tail.dump();
    out += '\n';
  }
  return out;
}

Manifest manifest_from_text(const std::string& text) {
  Manifest manifest;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // ordered_json: the header's config object must re-dump byte-identically,
    // or a resumed manifest would not match the uninterrupted one.
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw std::runtime_error("malformed manifest: bad JSON line");
    }
    if (!have_header) {
      if (!j.contains("fingerprint")) throw std::runtime_error("malformed manifest: no header");
      manifest.fingerprint = u64_from_hex(j.at("fingerprint").get<std::string>());
      manifest.inputs_digest = u64_from_hex(j.at("inputs_digest").get<std::string>());
      manifest.config_json = j.at("config").dump();
      have_header = true;
      continue;
    }
    if (j.contains("summaries")) continue;  // derived rollup, recomputed on save
    Job job;
    job.generic = j.at("generic").get<int32_t>();
    job.window_days = j.at("window_days").get<int32_t>();
    job.status = status_from_token(j.at("status").get<std::string>());
    if (j.contains("note")) job.note = j.at("note").get<std::string>();
    if (j.contains("result")) job.result = result_from_json(j.at("result"));
    if (job.status == JobStatus::Done && !job.result)
      throw std::runtime_error("malformed manifest: done job without result");
    manifest.jobs.push_back(std::move(job));
  }
  if (!have_header) throw std::runtime_error("malformed manifest: no header");
  return manifest;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& out_dir) {
  const std::filesystem::path final_path = out_dir / kManifestName;
  const std::filesystem::path tmp_path = out_dir / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp_path.string());
    out << manifest_to_text(manifest);
    if (!out.flush()) throw std::runtime_error("cannot write " + tmp_path.string());
  }
  std::filesystem::rename(tmp_path, final_path);  // atomic on POSIX
}

std::optional<Manifest> load_manifest(const std::filesystem::path& out_dir) {
  const std::filesystem::path path = out_dir / kManifestName;
  if (!std::filesystem::exists(path)) return std::nullopt;
  return manifest_from_text(read_file_bytes(path.string()));
}

namespace {

struct LoadedInputs {
  PatientTable patients;
  EventStore store;
  uint64_t digest = 0;
};

// Parse, digest and clean the input files under one config.
LoadedInputs load_and_clean(const RunConfig& config) {
  const std::string patient_bytes = read_file_bytes(config.patients_path);
  const std::string event_bytes = read_file_bytes(config.events_path);
  const uint64_t digest = fnv1a64(event_bytes, fnv1a64(patient_bytes));

  std::istringstream pin(patient_bytes);
  PatientTable patients = parse_patients(pin);
  std::istringstream ein(event_bytes);
  EventStore store = parse_events(ein, patients);

  auto [clean_pt, clean_store] =
      clean_patients(patients, store, config.min_dx, config.min_visit_dates);
  return {std::move(clean_pt), std::move(clean_store), digest};
}

// Runs every Pending/Failed job over a pool, checkpointing the manifest
// under a single writer lock after each completion.
void execute_jobs(Manifest& manifest, const LoadedInputs& inputs, const RunConfig& config) {
  std::vector<size_t> todo;
  for (size_t i = 0; i < manifest.jobs.size(); ++i) {
    const JobStatus s = manifest.jobs[i].status;
    if (s == JobStatus::Pending || s == JobStatus::Failed) todo.push_back(i);
  }
  if (todo.empty()) return;

  const int n_workers =
      config.workers > 0 ? config.workers
                         : std::max(1, int(std::thread::hardware_concurrency()));
  std::atomic<size_t> cursor{0};
  std::mutex write_mu;
  const std::filesystem::path out_dir(config.out_dir);

  auto worker = [&] {
    for (;;) {
      const size_t slot = cursor.fetch_add(1);
      if (slot >= todo.size()) return;
      const size_t job_index = todo[slot];
      Job job = manifest.jobs[job_index];
      job.status = JobStatus::Pending;
      job.note.clear();
      job.result.reset();
      run_single_job(job, inputs.store, inputs.patients, config);
      std::lock_guard<std::mutex> lock(write_mu);
      manifest.jobs[job_index] = std::move(job);
      save_manifest(manifest, out_dir);
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(size_t(n_workers));
  for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
}

}  // namespace

Manifest run(const RunConfig& config) {
  config.validate();
  std::filesystem::create_directories(config.out_dir);
  if (!config.emit_cohorts_dir.empty())
    std::filesystem::create_directories(config.emit_cohorts_dir);
  if (!config.emit_tables_dir.empty())
    std::filesystem::create_directories(config.emit_tables_dir);

  LoadedInputs inputs = load_and_clean(config);
  const uint64_t fingerprint = config_fingerprint(config);

  Manifest manifest;
  if (std::optional<Manifest> existing = load_manifest(config.out_dir)) {
    if (existing->fingerprint != fingerprint)
      throw std::runtime_error("config changed; refusing to resume");
    if (existing->inputs_digest != inputs.digest)
      throw std::runtime_error("input files changed; refusing to resume");
    const std::vector<Job> plan = plan_jobs(inputs.store, config);
    if (plan.size() != existing->jobs.size())
      throw std::runtime_error("manifest does not match the plan; refusing to resume");
    for (size_t i = 0; i < plan.size(); ++i)
      if (plan[i].generic != existing->jobs[i].generic ||
          plan[i].window_days != existing->jobs[i].window_days)
        throw std::runtime_error("manifest does not match the plan; refusing to resume");
    manifest = std::move(*existing);
  } else {
    manifest.fingerprint = fingerprint;
    manifest.config_json = config_canonical_json(config);
    manifest.inputs_digest = inputs.digest;
    manifest.jobs = plan_jobs(inputs.store, config);
    save_manifest(manifest, config.out_dir);
  }

  execute_jobs(manifest, inputs, config);
  return manifest;
}

Manifest resume(const std::string& out_dir, int workers) {
  std::optional<Manifest> existing = load_manifest(out_dir);
  if (!existing) throw std::runtime_error("no manifest in " + out_dir);
  Manifest manifest = std::move(*existing);

  RunConfig config = config_from_canonical_json(manifest.config_json);
  config.out_dir = out_dir;
  config.workers = workers;
  if (config_fingerprint(config) != manifest.fingerprint)
    throw std::runtime_error("config changed; refusing to resume");

  LoadedInputs inputs = load_and_clean(config);
  if (inputs.digest != manifest.inputs_digest)
    throw std::runtime_error("input files changed; refusing to resume");

  execute_jobs(manifest, inputs, config);
  return manifest;
}

}  // namespace rxpipe

#pragma once
// Batch orchestration: plans one job per (generic, window), runs jobs on a
// local worker pool with per-job derived seeds so results never depend on
// worker count or scheduling, checkpoints a JSON-lines manifest after
// every completion (atomic temp-file rename), and renders the CSV/SVG
// reports. Nothing here records wall-clock time — reruns are
// byte-comparable.

#include <filesystem>

#include "rxpipe/cohort.hpp"
#include "rxpipe/evaluate.hpp"

namespace rxpipe {

enum class JobStatus { Pending, Done, Skipped, Failed };

struct Job {
  int32_t generic = 0;
  int32_t window_days = 0;
  JobStatus status = JobStatus::Pending;
  std::string note;  // skip reason or failure message
  std::optional<ModelResult> result;

  friend bool operator==(const Job&, const Job&) = default;
};

struct RunConfig {
  std::string patients_path;
  std::string events_path;
  std::vector<int32_t> windows = {30, 182, 730, 1825};
  int32_t min_cases = 500;
  int32_t min_dx = 4;
  int32_t min_visit_dates = 2;
  int32_t dob_tolerance_days = 30;
  double prevalence_threshold = 0.01;
  PrevalenceMode prevalence_mode = PrevalenceMode::Pooled;
  int n_trees = 500;
  double mtry_fraction = 0.10;
  int k_folds = 10;
  int workers = 0;  // 0 = hardware concurrency; never part of the fingerprint
  uint64_t seed = 0;
  double flag_threshold = 0.9167;
  std::string out_dir;
  std::string emit_cohorts_dir;  // empty = off
  std::string emit_tables_dir;   // empty = off

  void validate() const;
};

// FNV-1a 64-bit, with a continuation form so multiple buffers can be
// chained through one digest.
inline constexpr uint64_t kFnvOffset = 14695981039346656037ull;
uint64_t fnv1a64(std::string_view bytes, uint64_t h = kFnvOffset);

// Canonical JSON of the semantically meaningful fields only — input
// paths, windows, thresholds, forest settings, seed. out_dir, worker
// count and the emit directories are execution knobs and stay out, so
// reruns with different parallelism fingerprint identically.
std::string config_canonical_json(const RunConfig& config);
RunConfig config_from_canonical_json(const std::string& text);
uint64_t config_fingerprint(const RunConfig& config);

struct Manifest {
  uint64_t fingerprint = 0;
  std::string config_json;     // canonical form, round-trips through resume
  uint64_t inputs_digest = 0;  // FNV-1a64 over the raw input file bytes
  std::vector<Job> jobs;       // plan order: ascending (generic, window)

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

// Cartesian product of eligible generics and windows, all Pending,
// ordered by (generic, window). Expects the cleaned store. Throws
// "empty plan" when no generic qualifies.
std::vector<Job> plan_jobs(const EventStore& store, const RunConfig& config);

// Documented mix: seed -> mix(mix(master, generic), window). Adding or
// removing generics never perturbs another job's stream.
uint64_t job_seed(uint64_t master_seed, int32_t generic, int32_t window_days);

// One job body: match -> verify -> tabulate (censored) -> leakage scan ->
// prevalence filter -> folds -> cross-validate. Fewer pairs than k folds
// becomes Skipped("too few pairs"); any thrown error becomes Failed with
// the message captured. Never throws.
void run_single_job(Job& job, const EventStore& store, const PatientTable& patients,
                    const RunConfig& config);

// JSON lines: a header object (fingerprint, inputs digest, config), one
// object per job in plan order, and a trailing derived per-window summary
// line. Parsing ignores the summary line; it is recomputed on save.
std::string manifest_to_text(const Manifest& manifest);
Manifest manifest_from_text(const std::string& text);

// manifest.jsonl in out_dir; save goes through a temp file + rename so a
// kill at any point leaves either the old or the new manifest, never a
// torn one.
void save_manifest(const Manifest& manifest, const std::filesystem::path& out_dir);
std::optional<Manifest> load_manifest(const std::filesystem::path& out_dir);

// Loads and cleans the inputs, plans jobs (or adopts an existing manifest
// whose fingerprint and input digest match — mismatches refuse with
// "config changed; refusing to resume"), then executes every Pending or
// Failed job across the worker pool.
Manifest run(const RunConfig& config);

// Re-executes Pending/Failed jobs under the manifest's stored config;
// Done/Skipped jobs are untouched.
Manifest resume(const std::string& out_dir, int workers = 0);

// results.csv, summary.csv, kde.csv, flags.csv and kde.svg under out_dir.
// Throws when the manifest has no Done job.
void report(const Manifest& manifest, const std::string& out_dir);

}  // namespace rxpipe

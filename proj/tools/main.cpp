// Command-line front end: synth | run | resume | report.
// Exit codes: 0 success, 1 fatal config/IO error, 2 run completed with at
// least one failed job.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "rxpipe/pipeline.hpp"
#include "rxpipe/rng.hpp"
#include "rxpipe/synth.hpp"

namespace {

// The generator and the de-identification pass draw from separate streams
// of the one user-facing seed.
constexpr uint64_t kDeidStream = 1000;

int count_failed(const rxpipe::Manifest& manifest) {
  int n = 0;
  for (const rxpipe::Job& job : manifest.jobs)
    if (job.status == rxpipe::JobStatus::Failed) ++n;
  return n;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int run_synth(const rxpipe::SynthConfig& config, uint64_t seed, const std::string& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);

  rxpipe::SynthOutput raw = rxpipe::generate(config, seed);
  rxpipe::DeidOutput deid =
      rxpipe::deidentify(raw.patients, raw.store, rxpipe::mix_seed(seed, kDeidStream));
  rxpipe::GroundTruth truth = rxpipe::remap_truth(raw.truth, deid.codemap);

  {
    std::ofstream out(dir / "patients.csv", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / "patients.csv").string());
    rxpipe::write_patients(out, deid.patients);
  }
  {
    std::ofstream out(dir / "events.csv", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / "events.csv").string());
    rxpipe::write_events(out, deid.patients, deid.store);
  }
  // Ground truth is written in the post-de-identification code space so it
  // lines up with the emitted events; the code map lets tests invert it.
  write_text(dir / "groundtruth.json", rxpipe::groundtruth_json(truth));
  write_text(dir / "codemap.json", rxpipe::codemap_json(deid.codemap));
  return 0;
}

int run_report(const std::string& out_dir) {
  std::optional<rxpipe::Manifest> manifest = rxpipe::load_manifest(out_dir);
  if (!manifest) throw std::runtime_error("no manifest in " + out_dir);
  rxpipe::report(*manifest, out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"case-control prescription prediction over event-stream EHR data"};
  app.require_subcommand(1);

  // ---- synth ----
  rxpipe::SynthConfig synth_config;
  uint64_t synth_seed = 1;
  std::string synth_out;
  CLI::App* synth = app.add_subcommand("synth", "generate a de-identified synthetic population");
  synth->add_option("--patients", synth_config.n_patients, "number of patients")
      ->capture_default_str();
  synth->add_option("--generics", synth_config.n_generics, "number of generic drugs")
      ->capture_default_str();
  synth->add_option("--prodrome-days", synth_config.prodrome_days,
                    "how close before the index date signal events cluster")
      ->capture_default_str();
  synth->add_option("--signal", synth_config.signal_strength,
                    "per-code probability that a case shows the signal")
      ->capture_default_str();
  synth->add_option("--dx-codes", synth_config.n_diagnosis_codes, "diagnosis code universe")
      ->capture_default_str();
  synth->add_option("--lab-codes", synth_config.n_lab_codes, "lab code universe")
      ->capture_default_str();
  synth->add_option("--years", synth_config.years_span, "span of birth dates in years")
      ->capture_default_str();
  synth->add_option("--background", synth_config.background_rate,
                    "mean background events per patient-year")
      ->capture_default_str();
  synth->add_option("--seed", synth_seed, "master seed")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();

  // ---- run ----
  rxpipe::RunConfig run_config;
  std::string prevalence_mode = "pooled";
  CLI::App* run = app.add_subcommand("run", "plan and execute all (generic, window) jobs");
  run->add_option("--patients", run_config.patients_path, "patients.csv path")->required();
  run->add_option("--events", run_config.events_path, "events.csv path")->required();
  run->add_option("--windows", run_config.windows,
                  "truncation windows in days, strictly increasing")
      ->delimiter(',')
      ->capture_default_str();
  run->add_option("--min-cases", run_config.min_cases, "cases required to model a generic")
      ->capture_default_str();
  run->add_option("--min-dx", run_config.min_dx, "diagnosis events required per patient")
      ->capture_default_str();
  run->add_option("--min-visits", run_config.min_visit_dates,
                  "distinct event dates required per patient")
      ->capture_default_str();
  run->add_option("--dob-tol", run_config.dob_tolerance_days,
                  "max birth-date gap for matched controls, days")
      ->capture_default_str();
  run->add_option("--prevalence", run_config.prevalence_threshold,
                  "feature prevalence threshold (strictly-greater rule)")
      ->capture_default_str();
  run->add_option("--prevalence-mode", prevalence_mode, "pooled|per-group")
      ->check(CLI::IsMember({"pooled", "per-group"}))
      ->capture_default_str();
  run->add_option("--trees", run_config.n_trees, "trees per forest")->capture_default_str();
  run->add_option("--mtry", run_config.mtry_fraction, "fraction of features tried per split")
      ->capture_default_str();
  run->add_option("--folds", run_config.k_folds, "cross-validation folds")
      ->capture_default_str();
  run->add_option("--workers", run_config.workers, "worker threads (0 = all cores)")
      ->capture_default_str();
  run->add_option("--seed", run_config.seed, "master seed")->capture_default_str();
  run->add_option("--flag-threshold", run_config.flag_threshold,
                  "mean-AUC threshold for the high-performer flag")
      ->capture_default_str();
  run->add_option("--out", run_config.out_dir, "output directory")->required();
  run->add_option("--emit-cohorts", run_config.emit_cohorts_dir,
                  "also write each job's matched cohort CSV here");
  run->add_option("--emit-tables", run_config.emit_tables_dir,
                  "also write each job's filtered feature table here");

  // ---- resume ----
  std::string resume_out;
  int resume_workers = 0;
  CLI::App* resume = app.add_subcommand("resume", "re-execute pending/failed jobs");
  resume->add_option("--out", resume_out, "output directory with a manifest")->required();
  resume->add_option("--workers", resume_workers, "worker threads (0 = all cores)")
      ->capture_default_str();

  // ---- report ----
  std::string report_out;
  CLI::App* report = app.add_subcommand("report", "write results/summary/kde/flags CSVs and SVG");
  report->add_option("--out", report_out, "output directory with a manifest")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // --help exits 0; any parse problem is a config error
  }

  try {
    if (synth->parsed()) return run_synth(synth_config, synth_seed, synth_out);
    if (run->parsed()) {
      run_config.prevalence_mode = prevalence_mode == "pooled"
                                       ? rxpipe::PrevalenceMode::Pooled
                                       : rxpipe::PrevalenceMode::PerGroup;
      const rxpipe::Manifest manifest = rxpipe::run(run_config);
      const int failed = count_failed(manifest);
      if (failed > 0) {
        std::cerr << failed << " job(s) failed; see the manifest for messages\n";
        return 2;
      }
      return 0;
    }
    if (resume->parsed()) {
      const rxpipe::Manifest manifest = rxpipe::resume(resume_out, resume_workers);
      const int failed = count_failed(manifest);
      if (failed > 0) {
        std::cerr << failed << " job(s) failed; see the manifest for messages\n";
        return 2;
      }
      return 0;
    }
    if (report->parsed()) return run_report(report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

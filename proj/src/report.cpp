#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "rxpipe/pipeline.hpp"

namespace rxpipe {

namespace {

// Shortest round-trip form, identical bytes for identical doubles.
std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

std::string fmt_fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2"};

struct PlotCurve {
  int32_t window_days = 0;
  KdeCurve curve;
};

void write_svg(const std::vector<PlotCurve>& curves, const std::filesystem::path& path) {
  constexpr double kWidth = 880, kHeight = 560;
  constexpr double kLeft = 70, kRight = 160, kTop = 30, kBottom = 55;
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;

  std::ofstream out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  out << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << kLeft + pw / 2 << "\" y=\"20\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">AUC density by truncation window</text>\n";

  if (curves.empty()) {
    out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
           "no density curves (each window needs at least two models)</text>\n";
    out << "</svg>\n";
    return;
  }

  double x0 = curves[0].curve.grid.front(), x1 = curves[0].curve.grid.back();
  double y1 = 0.0;
  for (const PlotCurve& c : curves) {
    x0 = std::min(x0, c.curve.grid.front());
    x1 = std::max(x1, c.curve.grid.back());
    for (double d : c.curve.density) y1 = std::max(y1, d);
  }
  y1 *= 1.05;

  const auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return kTop + ph - y / y1 * ph; };

  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\""
      << ph << "\" fill=\"none\" stroke=\"#333\"/>\n";

  for (int i = 0; i <= 5; ++i) {
    const double x = x0 + (x1 - x0) * double(i) / 5.0;
    const double gx = px(x);
    out << "<line x1=\"" << fmt_fixed(gx, 2) << "\" y1=\"" << kTop + ph << "\" x2=\""
        << fmt_fixed(gx, 2) << "\" y2=\"" << kTop + ph + 5 << "\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << fmt_fixed(gx, 2) << "\" y=\"" << kTop + ph + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << fmt_fixed(x, 2) << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double y = y1 * double(i) / 4.0;
    const double gy = py(y);
    out << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << fmt_fixed(gy, 2) << "\" x2=\"" << kLeft
        << "\" y2=\"" << fmt_fixed(gy, 2) << "\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << kLeft - 9 << "\" y=\"" << fmt_fixed(gy + 4, 2)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << fmt_fixed(y, 1) << "</text>\n";
  }
  out << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 14
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">AUC</text>\n";
  out << "<text x=\"22\" y=\"" << kTop + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
         "transform=\"rotate(-90 22 "
      << kTop + ph / 2 << ")\">density</text>\n";

  for (size_t i = 0; i < curves.size(); ++i) {
    const char* color = kPalette[i % (sizeof kPalette / sizeof kPalette[0])];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    const KdeCurve& c = curves[i].curve;
    for (size_t p = 0; p < c.grid.size(); ++p) {
      if (p) out << ' ';
      out << fmt_fixed(px(c.grid[p]), 2) << ',' << fmt_fixed(py(c.density[p]), 2);
    }
    out << "\"/>\n";

    const double ly = kTop + 14 + 20 * double(i);
    out << "<line x1=\"" << kWidth - kRight + 12 << "\" y1=\"" << ly << "\" x2=\""
        << kWidth - kRight + 40 << "\" y2=\"" << ly << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << kWidth - kRight + 46 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"12\">w = " << curves[i].window_days
        << "d</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace

void report(const Manifest& manifest, const std::string& out_dir) {
  const RunConfig config = config_from_canonical_json(manifest.config_json);
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);

  std::map<int32_t, std::vector<ModelResult>> by_window;
  std::map<int32_t, int> skipped_by_window;
  for (int32_t w : config.windows) {
    by_window[w];
    skipped_by_window[w];
  }
  size_t n_done = 0;
  for (const Job& job : manifest.jobs) {
    if (job.status == JobStatus::Done) {
      by_window[job.window_days].push_back(*job.result);
      ++n_done;
    } else if (job.status == JobStatus::Skipped) {
      ++skipped_by_window[job.window_days];
    }
  }
  if (n_done == 0) throw std::runtime_error("no completed jobs to report");

  {
    std::ofstream out = open_out(dir / "results.csv");
    out << "generic,window_days,n_pairs,n_features";
    for (int f = 0; f < config.k_folds; ++f) out << ",fold_auc_" << f;
    out << ",mean_auc,std_auc\n";
    for (const Job& job : manifest.jobs) {
      if (job.status != JobStatus::Done) continue;
      const ModelResult& r = *job.result;
      out << r.generic << ',' << r.window_days << ',' << r.n_pairs << ','
          << r.n_features_postfilter;
      for (double a : r.fold_aucs) out << ',' << fmt_double(a);
      out << ',' << fmt_double(r.mean_auc) << ',' << fmt_double(r.std_auc) << '\n';
    }
  }

  {
    std::ofstream out = open_out(dir / "summary.csv");
    out << "window_days,mean_auc,std_auc,n_models,n_skipped\n";
    for (int32_t w : config.windows) {
      const std::vector<ModelResult>& results = by_window[w];
      out << w << ',';
      if (!results.empty()) {
        const WindowSummary s = window_summary(results);
        out << fmt_double(s.mean) << ',' << fmt_double(s.stddev);
      } else {
        out << ',';  // no models at this window
      }
      out << ',' << results.size() << ',' << skipped_by_window[w] << '\n';
    }
  }

  std::vector<PlotCurve> curves;
  {
    std::ofstream out = open_out(dir / "kde.csv");
    out << "window_days,auc,density\n";
    for (int32_t w : config.windows) {
      const std::vector<ModelResult>& results = by_window[w];
      if (results.size() < 2) continue;
      std::vector<double> means;
      means.reserve(results.size());
      for (const ModelResult& r : results) means.push_back(r.mean_auc);
      KdeCurve curve;
      try {
        curve = kde_curve(means);
      } catch (const std::exception&) {
        continue;  // zero-variance window: no density to draw
      }
      for (int i = 0; i < kKdeGridPoints; ++i)
        out << w << ',' << fmt_double(curve.grid[size_t(i)]) << ','
            << fmt_double(curve.density[size_t(i)]) << '\n';
      curves.push_back({w, std::move(curve)});
    }
  }

  {
    std::ofstream out = open_out(dir / "flags.csv");
    out << "generic,mean_auc\n";
    const std::vector<ModelResult>& smallest = by_window[config.windows.front()];
    std::map<int32_t, double> mean_of;
    for (const ModelResult& r : smallest) mean_of[r.generic] = r.mean_auc;
    for (int32_t g : flag_separable(smallest, config.flag_threshold))
      out << g << ',' << fmt_double(mean_of.at(g)) << '\n';
  }

  write_svg(curves, dir / "kde.svg");
}

}  // namespace rxpipe

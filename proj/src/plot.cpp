#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fedsim/harness.hpp"

namespace fedsim {

namespace {

constexpr double kWidth = 860.0;
constexpr double kHeight = 520.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 830.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 460.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> band_lo;  // only for singular value plots
  std::vector<double> band_hi;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

double nice_step(double range) {
  if (range <= 0.0) return 1.0;
  const double raw = range / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double mult : {1.0, 2.0, 5.0}) {
    if (raw <= mult * mag) return mult * mag;
  }
  return 10.0 * mag;
}

// Collapses a metrics file into one series per strategy, averaging the chosen
// value over run seeds round by round.
std::vector<Series> build_series(const std::string& path, PlotKind kind) {
  const std::vector<MetricsRow> rows = read_metrics_csv(path);
  if (rows.empty()) {
    throw std::runtime_error("plot: " + path + " has no data rows");
  }
  struct Cell {
    double sum = 0.0;
    double lo_sum = 0.0;
    double hi_sum = 0.0;
    std::size_t n = 0;
  };
  std::map<std::string, std::map<std::size_t, Cell>> grouped;
  for (const MetricsRow& r : rows) {
    Cell& cell = grouped[r.strategy][r.round];
    double v = 0.0;
    switch (kind) {
      case PlotKind::loss_curves: v = r.total; break;
      case PlotKind::accuracy_curves: v = r.test_accuracy; break;
      case PlotKind::singular_values: v = r.sv_mean; break;
    }
    cell.sum += v;
    if (kind == PlotKind::singular_values && !r.sv_values.empty()) {
      cell.lo_sum += r.sv_values.back();   // descending list: last is smallest
      cell.hi_sum += r.sv_values.front();
    }
    cell.n += 1;
  }
  std::vector<Series> out;
  for (const auto& [strategy, per_round] : grouped) {
    Series s;
    s.label = strategy;
    for (const auto& [round, cell] : per_round) {
      s.x.push_back(static_cast<double>(round));
      s.y.push_back(cell.sum / static_cast<double>(cell.n));
      if (kind == PlotKind::singular_values) {
        s.band_lo.push_back(cell.lo_sum / static_cast<double>(cell.n));
        s.band_hi.push_back(cell.hi_sum / static_cast<double>(cell.n));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

const char* y_label(PlotKind kind) {
  switch (kind) {
    case PlotKind::loss_curves: return "training loss";
    case PlotKind::accuracy_curves: return "test accuracy";
    case PlotKind::singular_values: return "classifier singular values";
  }
  return "";
}

const char* file_stem(PlotKind kind) {
  switch (kind) {
    case PlotKind::loss_curves: return "loss_curves";
    case PlotKind::accuracy_curves: return "accuracy_curves";
    case PlotKind::singular_values: return "singular_values";
  }
  return "plot";
}

}  // namespace

PlotKind plot_kind_from_name(const std::string& name) {
  if (name == "loss_curves") return PlotKind::loss_curves;
  if (name == "accuracy_curves") return PlotKind::accuracy_curves;
  if (name == "singular_values") return PlotKind::singular_values;
  throw ConfigError("unknown plot kind '" + name +
                    "' (expected loss_curves, accuracy_curves or singular_values)");
}

std::string plot_command(const std::vector<std::string>& csv_paths, PlotKind kind,
                         const std::string& out_dir) {
  if (csv_paths.empty()) throw ConfigError("plot: no metrics files given");

  std::vector<Series> series;
  for (const std::string& path : csv_paths) {
    for (Series& s : build_series(path, kind)) {
      // Disambiguate identical strategies coming from different files.
      for (const Series& seen : series) {
        if (seen.label == s.label) {
          s.label += " (" + std::filesystem::path(path).stem().string() + ")";
          break;
        }
      }
      series.push_back(std::move(s));
    }
  }

  double xmin = series[0].x.front(), xmax = series[0].x.back();
  double ymin = series[0].y[0], ymax = series[0].y[0];
  for (const Series& s : series) {
    for (double v : s.x) { xmin = std::min(xmin, v); xmax = std::max(xmax, v); }
    for (double v : s.y) { ymin = std::min(ymin, v); ymax = std::max(ymax, v); }
    for (double v : s.band_lo) ymin = std::min(ymin, v);
    for (double v : s.band_hi) ymax = std::max(ymax, v);
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto sx = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * (kRight - kLeft); };
  auto sy = [&](double y) { return kBottom - (y - ymin) / (ymax - ymin) * (kBottom - kTop); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  svg << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";

  // Axes and ticks.
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kBottom << "\" x2=\"" << kRight
      << "\" y2=\"" << kBottom << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kBottom << "\" stroke=\"black\"/>\n";
  const double xstep = nice_step(xmax - xmin);
  for (double t = std::ceil(xmin / xstep) * xstep; t <= xmax + 1e-9; t += xstep) {
    svg << "<line x1=\"" << fmt(sx(t)) << "\" y1=\"" << kBottom << "\" x2=\"" << fmt(sx(t))
        << "\" y2=\"" << kBottom + 5 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << fmt(sx(t)) << "\" y=\"" << kBottom + 20
        << "\" font-size=\"12\" text-anchor=\"middle\">" << fmt(t) << "</text>\n";
  }
  const double ystep = nice_step(ymax - ymin);
  for (double t = std::ceil(ymin / ystep) * ystep; t <= ymax + 1e-9; t += ystep) {
    svg << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << fmt(sy(t)) << "\" x2=\"" << kLeft
        << "\" y2=\"" << fmt(sy(t)) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << kLeft - 9 << "\" y=\"" << fmt(sy(t) + 4)
        << "\" font-size=\"12\" text-anchor=\"end\">" << fmt(t) << "</text>\n";
  }
  svg << "<text x=\"" << (kLeft + kRight) / 2 << "\" y=\"" << kBottom + 40
      << "\" font-size=\"14\" text-anchor=\"middle\">round</text>\n";
  svg << "<text x=\"18\" y=\"" << (kTop + kBottom) / 2
      << "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << (kTop + kBottom) / 2 << ")\">" << y_label(kind) << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
    if (!s.band_lo.empty()) {
      svg << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
      for (std::size_t t = 0; t < s.x.size(); ++t) {
        svg << fmt(sx(s.x[t])) << ',' << fmt(sy(s.band_hi[t])) << ' ';
      }
      for (std::size_t t = s.x.size(); t-- > 0;) {
        svg << fmt(sx(s.x[t])) << ',' << fmt(sy(s.band_lo[t])) << ' ';
      }
      svg << "\"/>\n";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t t = 0; t < s.x.size(); ++t) {
      svg << fmt(sx(s.x[t])) << ',' << fmt(sy(s.y[t])) << ' ';
    }
    svg << "\"/>\n";
    const double ly = kTop + 18.0 * static_cast<double>(i);
    svg << "<line x1=\"" << kRight - 150 << "\" y1=\"" << fmt(ly) << "\" x2=\""
        << kRight - 126 << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"1.8\"/>\n";
    svg << "<text x=\"" << kRight - 120 << "\" y=\"" << fmt(ly + 4)
        << "\" font-size=\"12\">" << s.label << "</text>\n";
  }
  svg << "</svg>\n";

  std::filesystem::create_directories(out_dir);
  const std::string out_path =
      (std::filesystem::path(out_dir) / (std::string(file_stem(kind)) + ".svg")).string();
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("plot: cannot open " + out_path);
  out << svg.str();
  return out_path;
}

}  // namespace fedsim

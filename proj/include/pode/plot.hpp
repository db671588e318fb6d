#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "pode/data.hpp"
#include "pode/model.hpp"

namespace pode {

inline constexpr const char* kObservedColor = "#2ca02c";
inline constexpr const char* kTruthColor = "#ff7f0e";
inline constexpr const char* kPredictionColor = "#7b2cbf";

struct PlotSeries {
  std::vector<double> obs_t, obs_v;
  std::vector<double> truth_t, truth_v;
  std::vector<double> pred_t, pred_v;
  std::string title;
};

/// Dense forecast curve for one sample, in raw units. `points` query times
/// span (last observation, last sample time].
inline PlotSeries plot_series(LatentOdeModel& m, const Normalizer& norm, const TimeSeriesSample& s,
                              std::size_t points = 400) {
  PlotSeries p;
  p.obs_t.assign(s.times.begin(), s.times.begin() + static_cast<std::ptrdiff_t>(s.split));
  p.obs_v.assign(s.values.begin(), s.values.begin() + static_cast<std::ptrdiff_t>(s.split));
  const auto ft = s.forecast_times();
  const auto fv = s.forecast_values();
  p.truth_t.assign(ft.begin(), ft.end());
  p.truth_v.assign(fv.begin(), fv.end());
  const double t0 = s.times[s.split - 1];
  const double t1 = s.times.back();
  ForecastRequest r;
  r.obs_times = p.obs_t;
  for (double v : p.obs_v) r.obs_values.push_back(norm.apply(v));
  for (std::size_t i = 1; i <= points; ++i)
    r.query_times.push_back(t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(points));
  auto out = m.forecast(std::span<const ForecastRequest>(&r, 1));
  p.pred_t = r.query_times;
  for (double v : out.at(0)) p.pred_v.push_back(norm.invert(v));
  return p;
}

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline std::string render_svg(const PlotSeries& p) {
  const double W = 800, H = 450, L = 60, R = 20, T = 40, B = 50;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  auto extend = [&](const std::vector<double>& ts, const std::vector<double>& vs) {
    for (double t : ts) xmin = std::min(xmin, t), xmax = std::max(xmax, t);
    for (double v : vs)
      if (std::isfinite(v)) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
  };
  extend(p.obs_t, p.obs_v);
  extend(p.truth_t, p.truth_v);
  extend(p.pred_t, p.pred_v);
  if (!(xmax > xmin)) xmax = xmin + 1;
  if (!(ymax > ymin)) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto X = [&](double t) { return L + (t - xmin) / (xmax - xmin) * (W - L - R); };
  auto Y = [&](double v) { return H - B - (v - ymin) / (ymax - ymin) * (H - T - B); };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
     << detail::xml_escape(p.title) << "</text>\n";

  // axes with five ticks each
  os << "<g id=\"axes\" stroke=\"black\" stroke-width=\"1\">\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\"/>\n</g>\n"
     << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double t = xmin + (xmax - xmin) * i / 4.0, v = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << detail::num(X(t)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
       << detail::num(t) << "</text>\n"
       << "<text x=\"" << L - 6 << "\" y=\"" << detail::num(Y(v) + 4) << "\" text-anchor=\"end\">" << detail::num(v)
       << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">time</text>\n"
     << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">value</text>\n</g>\n";

  os << "<polyline id=\"prediction\" fill=\"none\" stroke=\"" << kPredictionColor << "\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < p.pred_t.size(); ++i) {
    if (i) os << ' ';
    os << detail::num(X(p.pred_t[i])) << ',' << detail::num(Y(p.pred_v[i]));
  }
  os << "\"/>\n";
  auto dots = [&](const char* id, const char* color, const std::vector<double>& ts, const std::vector<double>& vs) {
    os << "<g id=\"" << id << "\" fill=\"" << color << "\">\n";
    for (std::size_t i = 0; i < ts.size(); ++i)
      os << "<circle cx=\"" << detail::num(X(ts[i])) << "\" cy=\"" << detail::num(Y(vs[i])) << "\" r=\"2.5\"/>\n";
    os << "</g>\n";
  };
  dots("observed", kObservedColor, p.obs_t, p.obs_v);
  dots("truth", kTruthColor, p.truth_t, p.truth_v);

  const double lx = W - R - 150, ly = T + 6;
  os << "<g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<circle cx=\"" << lx << "\" cy=\"" << ly << "\" r=\"4\" fill=\"" << kObservedColor << "\"/>"
     << "<text x=\"" << lx + 10 << "\" y=\"" << ly + 4 << "\">observed</text>\n"
     << "<circle cx=\"" << lx << "\" cy=\"" << ly + 18 << "\" r=\"4\" fill=\"" << kTruthColor << "\"/>"
     << "<text x=\"" << lx + 10 << "\" y=\"" << ly + 22 << "\">ground truth</text>\n"
     << "<line x1=\"" << lx - 6 << "\" y1=\"" << ly + 36 << "\" x2=\"" << lx + 6 << "\" y2=\"" << ly + 36
     << "\" stroke=\"" << kPredictionColor << "\" stroke-width=\"2\"/>"
     << "<text x=\"" << lx + 10 << "\" y=\"" << ly + 40 << "\">prediction</text>\n</g>\n"
     << "</svg>\n";
  return os.str();
}

/// Writes sample_<id>.svg for each id into `out_dir`; returns the paths.
inline std::vector<std::filesystem::path> plot_samples(LatentOdeModel& m, const Normalizer& norm, const Dataset& d,
                                                       const std::vector<std::size_t>& ids,
                                                       const std::filesystem::path& out_dir) {
  for (std::size_t id : ids)
    if (id >= d.samples.size())
      throw std::out_of_range("plot: unknown sample id " + std::to_string(id) + " (dataset has " +
                              std::to_string(d.samples.size()) + ")");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> paths;
  for (std::size_t id : ids) {
    PlotSeries p = plot_series(m, norm, d.samples[id]);
    p.title = "sample " + std::to_string(id) + " (" + role_name(d.samples[id].role) + ")";
    const auto path = out_dir / ("sample_" + std::to_string(id) + ".svg");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << render_svg(p);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace pode

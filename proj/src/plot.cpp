#include "etgrl/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace etgrl::plot {
namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 72.0;
constexpr double kRight = 150.0;
constexpr double kTop = 36.0;
constexpr double kBottom = 48.0;

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double ParseNumber(const std::string& s, int lineno) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ArgumentError("line " + std::to_string(lineno) + ": bad number '" +
                        s + "'");
  }
}

std::string Fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string Label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string Escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

double NiceStep(double range) {
  const double raw = range / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  const double nice = f < 1.5 ? 1.0 : f < 3.0 ? 2.0 : f < 7.0 ? 5.0 : 10.0;
  return nice * mag;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void Add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool Empty() const { return !(lo <= hi); }
  // Widened copy with a non-zero span.
  Range Padded() const {
    Range r = *this;
    if (Empty()) return {0.0, 1.0};
    if (r.hi - r.lo < 1e-12) {
      const double pad = std::max(0.5, 0.05 * std::abs(r.lo));
      r.lo -= pad;
      r.hi += pad;
    }
    return r;
  }
};

}  // namespace

std::vector<rl::MetricsRow> ReadMetricsCsv(std::istream& is) {
  std::ostringstream expected;
  rl::WriteMetricsCsvHeader(expected);
  std::string line;
  if (!std::getline(is, line) || line + "\n" != expected.str()) {
    throw ArgumentError("metrics.csv header mismatch");
  }
  std::vector<rl::MetricsRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = SplitCsv(line);
    if (c.size() != 8) {
      throw ArgumentError("metrics.csv line " + std::to_string(lineno) +
                          " has " + std::to_string(c.size()) + " fields");
    }
    rl::MetricsRow r;
    r.record = c[0];
    r.outer_iteration = static_cast<std::int64_t>(ParseNumber(c[1], lineno));
    r.step = static_cast<std::int64_t>(ParseNumber(c[2], lineno));
    r.critic_loss = ParseNumber(c[3], lineno);
    r.actor_loss = ParseNumber(c[4], lineno);
    r.mean_episode_return = ParseNumber(c[5], lineno);
    r.buffer_size = static_cast<int>(ParseNumber(c[6], lineno));
    r.eval_return = ParseNumber(c[7], lineno);
    rows.push_back(r);
  }
  return rows;
}

std::vector<es::IterationRecord> ReadHistoryCsv(std::istream& is) {
  std::ostringstream expected;
  es::WriteHistoryCsvHeader(expected);
  std::string line;
  if (!std::getline(is, line) || line + "\n" != expected.str()) {
    throw ArgumentError("evolution.csv header mismatch");
  }
  std::vector<es::IterationRecord> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = SplitCsv(line);
    if (c.size() != 5) {
      throw ArgumentError("evolution.csv line " + std::to_string(lineno) +
                          " has " + std::to_string(c.size()) + " fields");
    }
    rows.push_back({static_cast<std::int64_t>(ParseNumber(c[0], lineno)),
                    ParseNumber(c[1], lineno), ParseNumber(c[2], lineno),
                    ParseNumber(c[3], lineno), ParseNumber(c[4], lineno)});
  }
  return rows;
}

std::vector<sim::TraceRecord> ReadTrace(std::istream& is) {
  std::vector<sim::TraceRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sim::TraceRecordFromJson(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError("trace line " + std::to_string(lineno) + ": " +
                          e.what());
    }
  }
  return out;
}

std::string RenderSvg(const Chart& chart) {
  Range xr, yr;
  for (const auto& s : chart.series) {
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
        xr.Add(s.x[i]);
        yr.Add(s.y[i]);
      }
    }
  }
  const Range data_x = xr, data_y = yr;
  xr = xr.Padded();
  yr = yr.Padded();
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  if (chart.equal_aspect) {
    const double scale = std::max((xr.hi - xr.lo) / pw, (yr.hi - yr.lo) / ph);
    const double cx = 0.5 * (xr.lo + xr.hi), cy = 0.5 * (yr.lo + yr.hi);
    xr = {cx - 0.5 * scale * pw, cx + 0.5 * scale * pw};
    yr = {cy - 0.5 * scale * ph, cy + 0.5 * scale * ph};
  }
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) {
    return kTop + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph;
  };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
    << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' '
    << kHeight << "\"";
  if (!data_x.Empty()) {
    o << " data-x-min=\"" << Label(data_x.lo) << "\" data-x-max=\""
      << Label(data_x.hi) << "\" data-y-min=\"" << Label(data_y.lo)
      << "\" data-y-max=\"" << Label(data_y.hi) << "\"";
  }
  o << ">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << Fmt(kWidth / 2) << "\" y=\"22\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"15\">"
    << Escape(chart.title) << "</text>\n";
  o << "<rect x=\"" << Fmt(kLeft) << "\" y=\"" << Fmt(kTop) << "\" width=\""
    << Fmt(pw) << "\" height=\"" << Fmt(ph)
    << "\" fill=\"none\" stroke=\"#444\"/>\n";

  const double xs = NiceStep(xr.hi - xr.lo), ys = NiceStep(yr.hi - yr.lo);
  for (double t = std::ceil(xr.lo / xs) * xs; t <= xr.hi + 1e-9 * xs; t += xs) {
    o << "<line x1=\"" << Fmt(px(t)) << "\" y1=\"" << Fmt(kTop + ph)
      << "\" x2=\"" << Fmt(px(t)) << "\" y2=\"" << Fmt(kTop)
      << "\" stroke=\"#e4e4e4\"/>\n";
    o << "<text x=\"" << Fmt(px(t)) << "\" y=\"" << Fmt(kTop + ph + 16)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"11\">"
      << Label(t) << "</text>\n";
  }
  for (double t = std::ceil(yr.lo / ys) * ys; t <= yr.hi + 1e-9 * ys; t += ys) {
    o << "<line x1=\"" << Fmt(kLeft) << "\" y1=\"" << Fmt(py(t)) << "\" x2=\""
      << Fmt(kLeft + pw) << "\" y2=\"" << Fmt(py(t))
      << "\" stroke=\"#e4e4e4\"/>\n";
    o << "<text x=\"" << Fmt(kLeft - 6) << "\" y=\"" << Fmt(py(t) + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
         "font-size=\"11\">"
      << Label(t) << "</text>\n";
  }
  o << "<text x=\"" << Fmt(kLeft + pw / 2) << "\" y=\"" << Fmt(kHeight - 10)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
    << Escape(chart.x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << Fmt(kTop + ph / 2)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
       "transform=\"rotate(-90 16 "
    << Fmt(kTop + ph / 2) << ")\">" << Escape(chart.y_label) << "</text>\n";

  int legend = 0;
  for (const auto& s : chart.series) {
    std::ostringstream pts;
    int n = 0;
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      pts << (n++ ? " " : "") << Fmt(px(s.x[i])) << ',' << Fmt(py(s.y[i]));
    }
    if (n == 1) {
      const auto xy = pts.str();
      const auto comma = xy.find(',');
      o << "<circle cx=\"" << xy.substr(0, comma) << "\" cy=\""
        << xy.substr(comma + 1) << "\" r=\"2.5\" fill=\"" << s.color
        << "\"/>\n";
    } else if (n > 1) {
      o << "<polyline fill=\"none\" stroke=\"" << s.color
        << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";
    }
    const double ly = kTop + 12 + 18 * legend++;
    o << "<line x1=\"" << Fmt(kLeft + pw + 10) << "\" y1=\"" << Fmt(ly)
      << "\" x2=\"" << Fmt(kLeft + pw + 30) << "\" y2=\"" << Fmt(ly)
      << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << Fmt(kLeft + pw + 34) << "\" y=\"" << Fmt(ly + 4)
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << Escape(s.name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

Chart TrainingChart(const std::vector<rl::MetricsRow>& rows) {
  Chart c{"Training curve", "environment steps", "return", {}, false};
  Series eval{"evaluation", "#1f5fbf", {}, {}};
  Series train{"training episodes", "#d9822b", {}, {}};
  for (const auto& r : rows) {
    if (r.record == "outer") {
      eval.x.push_back(static_cast<double>(r.step));
      eval.y.push_back(r.eval_return);
    } else {
      train.x.push_back(static_cast<double>(r.step));
      train.y.push_back(r.mean_episode_return);
    }
  }
  c.series = {eval, train};
  return c;
}

Chart EvolutionChart(const std::vector<es::IterationRecord>& history) {
  Chart c{"Trajectory generator evolution", "ES iteration", "fitness", {},
          false};
  Series best{"best", "#1f5fbf", {}, {}};
  Series mean{"population mean", "#7a7a7a", {}, {}};
  for (const auto& r : history) {
    best.x.push_back(static_cast<double>(r.iteration));
    best.y.push_back(r.best_fitness);
    mean.x.push_back(static_cast<double>(r.iteration));
    mean.y.push_back(r.mean_fitness);
  }
  c.series = {best, mean};
  return c;
}

Chart TrajectoryChart(const std::vector<sim::TraceRecord>& trace) {
  Chart c{"Body and foot trajectories", "x (m)", "z (m)", {}, true};
  static const char* kColors[] = {"#c0392b", "#27ae60", "#8e44ad", "#d68910"};
  static const char* kNames[] = {"FL foot", "FR foot", "RL foot", "RR foot"};
  Series body{"trunk", "#1f2f4f", {}, {}};
  std::vector<Series> feet;
  for (int leg = 0; leg < sim::kLegs; ++leg) {
    feet.push_back({kNames[leg], kColors[leg], {}, {}});
  }
  for (const auto& r : trace) {
    body.x.push_back(r.position.x());
    body.y.push_back(r.position.y());
    for (int leg = 0; leg < sim::kLegs; ++leg) {
      feet[leg].x.push_back(r.feet[leg].x());
      feet[leg].y.push_back(r.feet[leg].y());
    }
  }
  c.series.push_back(body);
  for (auto& f : feet) c.series.push_back(std::move(f));
  return c;
}

}  // namespace etgrl::plot

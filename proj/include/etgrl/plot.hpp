#pragma once

// Deterministic SVG charts for run directories: training curves, evolution
// curves and body/foot trajectories.

#include <istream>
#include <string>
#include <vector>

#include "etgrl/etg.hpp"
#include "etgrl/quadsim.hpp"
#include "etgrl/rlcore.hpp"

namespace etgrl::plot {

// Parse the CSV files written during training. Throw ArgumentError on a
// header mismatch or a malformed row.
std::vector<rl::MetricsRow> ReadMetricsCsv(std::istream& is);
std::vector<es::IterationRecord> ReadHistoryCsv(std::istream& is);
std::vector<sim::TraceRecord> ReadTrace(std::istream& is);

struct Series {
  std::string name;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  // Keep one unit in x equal to one unit in y.
  bool equal_aspect = false;
};

// Non-finite points are skipped. The root element carries data-x-min,
// data-x-max, data-y-min and data-y-max with the plotted data range.
std::string RenderSvg(const Chart& chart);

// Evaluation return per outer iteration and training-episode return per
// metrics row, against environment steps.
Chart TrainingChart(const std::vector<rl::MetricsRow>& rows);
Chart EvolutionChart(const std::vector<es::IterationRecord>& history);
// Trunk center and the four feet in the x-z plane.
Chart TrajectoryChart(const std::vector<sim::TraceRecord>& trace);

}  // namespace etgrl::plot

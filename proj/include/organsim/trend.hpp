#pragma once

// Rule-based trend classification and the symbolic summary rows built from it.

#include <cstddef>
#include <map>
#include <span>
#include <string>

#include "organsim/grammar.hpp"

namespace organsim {

struct TrendConfig {
  double relative_delta = 0.05;  // fraction of |window mean|
  double default_floor = 1e-6;
  std::map<std::string, double> floors;  // qualified indicator -> absolute floor

  double delta_for(std::string_view qualified, std::span<const double> history) const;
};

// k = history.size() must be at least 2. Fluctuation (two or more sign
// alternations between consecutive differences, each larger than delta) wins
// over rise/fall, which compare last - first against delta.
TrendType classify_trend(std::span<const double> history, double delta);

struct AnalyzerConfig {
  std::size_t lookback = 3;
  // At window end times that are multiples of `heartbeat_h`, stable
  // indicators are reported too (0 = never).
  double heartbeat_h = 0.0;

  bool heartbeat_due(double end_h) const;
  TrendConfig trend;
};

// Row for the window's end time. Only non-stable indicators are listed unless
// `heartbeat_due`.
SummaryRow analyze_window(const SystemWindowBlock& window, const AnalyzerConfig& cfg,
                          bool heartbeat_due = false);

}  // namespace organsim

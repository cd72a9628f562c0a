#include "organsim/trend.hpp"

#include <algorithm>
#include <cmath>

#include "organsim/errors.hpp"

namespace organsim {

double TrendConfig::delta_for(std::string_view qualified, std::span<const double> history) const {
  double mean = 0.0;
  for (double v : history) mean += v;
  if (!history.empty()) mean /= static_cast<double>(history.size());
  double floor = default_floor;
  if (auto it = floors.find(std::string(qualified)); it != floors.end()) floor = it->second;
  return std::max(relative_delta * std::fabs(mean), floor);
}

TrendType classify_trend(std::span<const double> history, double delta) {
  if (history.size() < 2) throw ValidationError("classify_trend needs at least two values");
  int alternations = 0;
  int prev_sign = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    const double d = history[i] - history[i - 1];
    if (std::fabs(d) <= delta) continue;
    const int sign = d > 0 ? 1 : -1;
    if (prev_sign != 0 && sign != prev_sign) ++alternations;
    prev_sign = sign;
  }
  if (alternations >= 2) return TrendType::Fluctuate;
  const double net = history.back() - history.front();
  if (net > delta) return TrendType::Rise;
  if (net < -delta) return TrendType::Fall;
  return TrendType::RemainStable;
}

bool AnalyzerConfig::heartbeat_due(double end_h) const {
  if (!(heartbeat_h > 0.0)) return false;
  const double k = end_h / heartbeat_h;
  return std::fabs(k - std::round(k)) < 1e-9;
}

SummaryRow analyze_window(const SystemWindowBlock& window, const AnalyzerConfig& cfg,
                          bool heartbeat_due) {
  std::vector<SymbolicEvent> events;
  for (const auto& s : window.series) {
    if (s.values.size() < 2) continue;
    const std::size_t k = std::min(std::max<std::size_t>(cfg.lookback, 2), s.values.size());
    const std::span<const double> hist(s.values.data() + s.values.size() - k, k);
    const auto q = qualified_name(window.system, s.name);
    const auto type = classify_trend(hist, cfg.trend.delta_for(q, hist));
    if (type == TrendType::RemainStable && !heartbeat_due) continue;
    events.push_back({window.end_h, q, type, s.values.back()});
  }
  return SummaryRow::at(window.end_h, std::move(events));
}

}  // namespace organsim

#include "organsim/compensator.hpp"

#include "organsim/backends.hpp"
#include "organsim/errors.hpp"

namespace organsim {

void CompensatorConfig::validate() const {
  if (!(gate_threshold >= 0.0 && gate_threshold <= 1.0)) {
    throw ValidationError("gate_threshold must be in [0, 1]");
  }
  if (history_depth == 0) throw ValidationError("history_depth must be positive");
}

std::vector<bool> gate(std::span<const double> confidences, double threshold) {
  std::vector<bool> out(confidences.size());
  for (std::size_t i = 0; i < confidences.size(); ++i) out[i] = confidences[i] < threshold;
  return out;
}

std::vector<double> apply_compensation(std::span<const double> pred, const ResidualEstimate& est) {
  std::vector<double> out(pred.begin(), pred.end());
  for (std::size_t i = 0; i < out.size() && i < est.size(); ++i) {
    if (est[i]) out[i] = pred[i] + *est[i];
  }
  return out;
}

void ResidualHistory::push(const std::string& indicator, std::optional<double> residual) {
  auto& row = rows_[indicator];
  row.push_back(residual);
  while (row.size() > depth_) row.pop_front();
}

std::vector<std::optional<double>> ResidualHistory::get(const std::string& indicator) const {
  const auto it = rows_.find(indicator);
  if (it == rows_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

ResidualHistoryBlock ResidualHistory::block(const std::vector<std::string>& indicators) const {
  ResidualHistoryBlock b;
  for (const auto& name : indicators) {
    auto values = get(name);
    if (values.size() < depth_) values.insert(values.begin(), depth_ - values.size(), std::nullopt);
    b.rows.push_back({name, std::move(values)});
  }
  return b;
}

nlohmann::json ResidualHistory::to_json() const {
  nlohmann::json rows = nlohmann::json::object();
  for (const auto& [name, row] : rows_) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : row) arr.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    rows[name] = arr;
  }
  return {{"depth", depth_}, {"rows", rows}};
}

ResidualHistory ResidualHistory::from_json(const nlohmann::json& j) {
  ResidualHistory h(j.at("depth").get<std::size_t>());
  for (const auto& [name, arr] : j.at("rows").items()) {
    for (const auto& v : arr) {
      h.push(name, v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
  }
  return h;
}

ResidualEstimate estimate_from_history(const std::vector<std::string>& indicators,
                                       const std::vector<bool>& gated,
                                       const ResidualHistory& history, double gain) {
  ResidualEstimate est(indicators.size());
  for (std::size_t i = 0; i < indicators.size(); ++i) {
    if (!gated[i]) continue;
    const auto row = history.get(indicators[i]);
    est[i] = gain * history_mean(row);
  }
  return est;
}

ResidualEstimate estimate_from_text(std::string_view text, const std::vector<std::string>& indicators,
                                    const std::vector<bool>& gated,
                                    std::optional<Violation>* violation) {
  ResidualEstimate est(indicators.size());
  ResidualBlock parsed;
  try {
    parsed = parse_residual_block(text);
  } catch (const GrammarError& e) {
    if (violation) *violation = e.violation();
    return est;
  }
  for (std::size_t i = 0; i < indicators.size(); ++i) {
    if (gated[i]) est[i] = parsed.get(indicators[i]);
  }
  return est;
}

double update_gain(double gain, std::span<const std::pair<double, double>> samples,
                   double learning_rate) {
  if (samples.empty()) return gain;
  double g = 0.0;
  for (const auto& [m, r] : samples) g += 2.0 * (gain * m - r) * m;
  return gain - learning_rate * g / static_cast<double>(samples.size());
}

}  // namespace organsim

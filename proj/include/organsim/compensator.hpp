#pragma once

// Confidence-gated residual correction.

#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "organsim/grammar.hpp"

namespace organsim {

struct CompensatorConfig {
  double gate_threshold = 0.8;
  std::size_t history_depth = 6;
  enum class Estimator { HistoryMean, Backend } estimator = Estimator::HistoryMean;
  double gain = 1.0;  // multiplies the history mean; learnt only when `train`
  bool train = false;
  double learning_rate = 0.05;

  void validate() const;
};

// gated[i] = confidences[i] < threshold (strict).
std::vector<bool> gate(std::span<const double> confidences, double threshold);

using ResidualEstimate = std::vector<std::optional<double>>;

// corrected[i] = pred[i] + e_hat[i] where present, pred[i] otherwise.
std::vector<double> apply_compensation(std::span<const double> pred, const ResidualEstimate& est);

class ResidualHistory {
 public:
  explicit ResidualHistory(std::size_t depth = 6) : depth_(depth) {}

  void push(const std::string& indicator, std::optional<double> residual);
  std::vector<std::optional<double>> get(const std::string& indicator) const;
  std::size_t depth() const noexcept { return depth_; }

  // Rows for `indicators`, each padded on the left with nulls to full depth.
  ResidualHistoryBlock block(const std::vector<std::string>& indicators) const;

  nlohmann::json to_json() const;
  static ResidualHistory from_json(const nlohmann::json& j);

  bool operator==(const ResidualHistory&) const = default;

 private:
  std::size_t depth_;
  std::map<std::string, std::deque<std::optional<double>>> rows_;
};

// Gain-scaled mean of the non-null recent residuals for each gated indicator.
ResidualEstimate estimate_from_history(const std::vector<std::string>& indicators,
                                       const std::vector<bool>& gated,
                                       const ResidualHistory& history, double gain);

// Reads a <residual> block. Entries for ungated indicators are discarded. On a
// grammar violation the estimate is all-null and the violation is returned.
ResidualEstimate estimate_from_text(std::string_view text, const std::vector<std::string>& indicators,
                                    const std::vector<bool>& gated,
                                    std::optional<Violation>* violation = nullptr);

// One gradient step on sum (gain * m - r)^2 over (history mean, realised
// signed residual) pairs.
double update_gain(double gain, std::span<const std::pair<double, double>> samples,
                   double learning_rate);

}  // namespace organsim

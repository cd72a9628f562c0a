#pragma once

// Per-run error accounting: MSE per indicator, per system and per step, PSE and SCR.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "organsim/cohort.hpp"
#include "organsim/orchestrator.hpp"

namespace organsim {

struct IndicatorMse {
  std::string indicator;  // qualified
  System system = System::Respiratory;
  double mse = 0.0;
  std::size_t n = 0;
};

struct SystemMse {
  System system = System::Respiratory;
  double mean = 0.0;  // over the system's indicators
  double sd = 0.0;    // population SD over the same
  std::size_t indicators = 0;
};

struct MetricReport {
  std::string run_id;
  std::string patient_id;
  std::vector<IndicatorMse> per_indicator;  // sorted by qualified name
  std::vector<SystemMse> per_system;        // table order
  std::vector<double> per_step;             // mean squared error over scored indicators
  std::map<System, std::vector<double>> per_step_system;
  double pse = 0.0;  // mean of per-indicator MSE
  std::size_t scored = 0;  // (step, indicator) pairs with finite truth
  std::optional<double> scr;

  nlohmann::json to_json() const;
};

// Scores the run's final values against `truth` (usually the patient's grid).
// Throws ValidationError when the run's horizon does not fit the grid.
MetricReport mse_report(const SimulationRun& run, const IndicatorGrid& truth);

// Fraction of stored simulator outputs that parse without violations.
double run_scr(const SimulationRun& run);

// Truth grid with the run's predicted cells written over it.
IndicatorGrid predicted_grid(const SimulationRun& run, const IndicatorGrid& truth);

}  // namespace organsim

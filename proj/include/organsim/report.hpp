#pragma once

// Cohort-level bundle: per-run reports cross-tabulated by SOFA stratum,
// system and pathway.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "organsim/metrics.hpp"
#include "organsim/pathway.hpp"

namespace organsim {

struct StratumSystemRow {
  std::string stratum;  // stratum_label() or "all"
  System system = System::Respiratory;
  double mean = 0.0;  // over per-indicator MSEs pooled across the stratum's runs
  double sd = 0.0;
  std::size_t samples = 0;
};

struct StratumPathwayRow {
  std::string stratum;
  std::string pathway;
  double mean_accuracy = 0.0;
  std::optional<double> mean_delta_t_h;
  std::optional<double> mean_normalized_error;
  std::size_t runs = 0;
  std::size_t qualifying = 0;
};

struct CohortReport {
  std::vector<MetricReport> runs;
  std::vector<StratumSystemRow> systems;
  std::vector<StratumPathwayRow> pathways;
  double pse = 0.0;  // per-run PSE weighted by scored pairs
  std::size_t scored = 0;
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
  // Flat tab-separated rows: section, stratum, key, field, value.
  std::string to_tsv() const;
};

struct ReportInput {
  const SimulationRun* run = nullptr;
  const PatientRecord* record = nullptr;
};

// Pathways whose thresholds are not configured are skipped with a note.
CohortReport cohort_report(const std::vector<ReportInput>& inputs,
                           const std::vector<PathwayDefinition>& pathways = {},
                           const RangeTable& ranges = {}, double grace_steps = 3.0);

}  // namespace organsim

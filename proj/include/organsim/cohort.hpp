#pragma once

// Patient records, 30-minute grids and sliding windows.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "organsim/systems.hpp"

namespace organsim {

struct BaseInfo {
  double age_years = 0.0;
  std::string sex;  // "female" | "male"
  double weight_kg = 0.0;
  double height_cm = 0.0;
  std::optional<double> bsa_m2;  // Mosteller estimate when absent
  std::vector<std::string> history;
  bool smoking = false;
  bool drinking = false;
  std::string insurance;
  std::string region;
  std::string marital_status;
  std::string icu_type;

  double bmi() const;
  double bsa() const;

  bool operator==(const BaseInfo&) const = default;
};

// Declared vocabularies for the categorical BaseInfo fields.
const std::vector<std::string>& sex_vocabulary();
const std::vector<std::string>& insurance_vocabulary();
const std::vector<std::string>& marital_vocabulary();
const std::vector<std::string>& icu_type_vocabulary();
const std::vector<std::string>& region_vocabulary();

// Throws InvalidRecord naming the first offending field.
void validate_base_info(const BaseInfo& info);

struct RawObservation {
  std::string indicator;
  double time_h = 0.0;
  double value = 0.0;

  bool operator==(const RawObservation&) const = default;
};

struct TreatmentEvent {
  std::string drug;
  double time_h = 0.0;
  double dose = 0.0;

  bool operator==(const TreatmentEvent&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  BaseInfo base_info;
  // system display name -> observations of that system's indicators
  std::map<std::string, std::vector<RawObservation>> systems;
  std::vector<TreatmentEvent> treatments;  // kept sorted by (time_h, drug)
  std::optional<int> sofa_score;
  std::map<std::string, double> outcome_labels;
  std::vector<std::string> provenance;

  // Equality ignoring provenance notes.
  bool same_content(const PatientRecord& other) const;
};

void sort_treatments(std::vector<TreatmentEvent>& events);

// Checks the Table 1 invariants, time/value/dose domains and statics.
void validate_record(const PatientRecord& record);

struct IndicatorSeries {
  std::string indicator;
  System system = System::Respiratory;
  std::vector<double> values;
  std::vector<bool> observed;
  std::vector<double> decay;
  bool available = true;  // false when the indicator has no observation at all

  bool operator==(const IndicatorSeries&) const = default;
};

struct IndicatorGrid {
  double start_h = 0.0;
  double step_h = 0.5;
  std::size_t length = 0;
  std::vector<IndicatorSeries> series;  // Table 1 order

  double time_at(std::size_t index) const { return start_h + step_h * static_cast<double>(index); }
  const IndicatorSeries* find(std::string_view indicator) const;
  IndicatorSeries* find(std::string_view indicator);
  // Available series of one system, in table order.
  std::vector<const IndicatorSeries*> system_series(System s) const;

  bool operator==(const IndicatorGrid&) const = default;
};

// Buckets observations into half-open cells [t, t + step_h). Cells holding
// several observations take their mean. `min_length` pads the grid with
// empty cells. Throws InvalidRecord on non-finite or negative-time input.
IndicatorGrid resample_to_grid(const std::vector<RawObservation>& observations, double step_h,
                               std::size_t min_length = 0);

// Forward fill; leading gaps are backfilled from the first observation.
// Indicators without any observation are marked unavailable.
IndicatorGrid forward_impute(IndicatorGrid grid);

// decay[i] = exp(-distance_to_nearest_observed(i) / tau_steps).
IndicatorGrid apply_masked_decay(IndicatorGrid grid, double tau_steps);

struct PreprocessConfig {
  double step_h = 0.5;
  double tau_steps = 4.0;
};

IndicatorGrid preprocess(const PatientRecord& record, const PreprocessConfig& cfg = {});

struct WindowConfig {
  std::size_t w = 6;
  std::size_t s = 1;
};

struct WindowSample {
  std::string patient_id;
  System system = System::Respiratory;
  std::size_t start_index = 0;
  std::vector<std::string> indicators;
  std::vector<std::vector<double>> values;  // [indicator][step]
  std::vector<std::vector<double>> decay;   // [indicator][step]
  std::vector<double> target;               // value of each indicator at target_index
  std::size_t target_index = 0;
  double window_start_h = 0.0;
  double window_end_h = 0.0;
  double target_time_h = 0.0;
  std::vector<TreatmentEvent> treatments_in_scope;
  WindowConfig window_config;
};

std::size_t window_count(std::size_t length, std::size_t w, std::size_t s);

std::vector<WindowSample> extract_windows(const IndicatorGrid& grid, System system,
                                          const WindowConfig& cfg,
                                          const PatientRecord* record = nullptr);

// Treatments with time in [from_h, to_h].
std::vector<TreatmentEvent> treatments_between(const std::vector<TreatmentEvent>& all,
                                               double from_h, double to_h);

enum class SofaStratum { Low, Mid, High };

std::string_view stratum_label(SofaStratum s);
SofaStratum stratum_of(int sofa);

struct Strata {
  std::map<SofaStratum, std::vector<const PatientRecord*>> groups;
  std::vector<const PatientRecord*> unscored;
};

Strata stratify_by_sofa(const std::vector<PatientRecord>& records);

}  // namespace organsim

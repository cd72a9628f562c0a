#include "organsim/cohort.hpp"

#include <utility>

#include <algorithm>
#include <cmath>
#include <limits>

#include "organsim/errors.hpp"

namespace organsim {

double BaseInfo::bmi() const {
  const double h = height_cm / 100.0;
  return weight_kg / (h * h);
}

double BaseInfo::bsa() const {
  if (bsa_m2) return *bsa_m2;
  return std::sqrt(height_cm * weight_kg / 3600.0);
}

const std::vector<std::string>& sex_vocabulary() {
  static const std::vector<std::string> v{"female", "male"};
  return v;
}

const std::vector<std::string>& insurance_vocabulary() {
  static const std::vector<std::string> v{"Medicare", "Medicaid", "Private", "Other", "No charge"};
  return v;
}

const std::vector<std::string>& marital_vocabulary() {
  static const std::vector<std::string> v{"single", "married", "divorced", "widowed", "unknown"};
  return v;
}

const std::vector<std::string>& icu_type_vocabulary() {
  static const std::vector<std::string> v{
      "Cardiac ICU",          "Medical ICU", "Surgical ICU", "Medical/Surgical ICU",
      "Neuro ICU",            "Trauma ICU",  "Coronary Care Unit",
      "Cardiac Vascular ICU", "Neuro Surgical ICU"};
  return v;
}

const std::vector<std::string>& region_vocabulary() {
  static const std::vector<std::string> v{"Europe",  "North America", "South America", "Asia",
                                          "Africa",  "Oceania",       "Unknown"};
  return v;
}

namespace {

void require_in(const std::string& value, const std::vector<std::string>& vocab,
                const char* field) {
  if (std::find(vocab.begin(), vocab.end(), value) == vocab.end()) {
    throw InvalidRecord(std::string("base_info.") + field + ": '" + value +
                        "' is not in the declared vocabulary");
  }
}

void require_positive(double v, const char* field) {
  if (!std::isfinite(v) || v <= 0.0) {
    throw InvalidRecord(std::string("base_info.") + field + " must be a positive number");
  }
}

}  // namespace

void validate_base_info(const BaseInfo& info) {
  require_positive(info.age_years, "age");
  require_positive(info.weight_kg, "weight");
  require_positive(info.height_cm, "height");
  if (info.bsa_m2) require_positive(*info.bsa_m2, "bsa");
  require_in(info.sex, sex_vocabulary(), "sex");
  require_in(info.insurance, insurance_vocabulary(), "insurance");
  require_in(info.region, region_vocabulary(), "region");
  require_in(info.marital_status, marital_vocabulary(), "marital_status");
  require_in(info.icu_type, icu_type_vocabulary(), "icu_type");
}

void sort_treatments(std::vector<TreatmentEvent>& events) {
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    if (a.time_h != b.time_h) return a.time_h < b.time_h;
    if (a.drug != b.drug) return a.drug < b.drug;
    return a.dose < b.dose;
  });
}

bool PatientRecord::same_content(const PatientRecord& o) const {
  return patient_id == o.patient_id && base_info == o.base_info && systems == o.systems &&
         treatments == o.treatments && sofa_score == o.sofa_score &&
         outcome_labels == o.outcome_labels;
}

void validate_record(const PatientRecord& record) {
  if (record.patient_id.empty()) throw InvalidRecord("patient_id is empty");
  validate_base_info(record.base_info);
  const auto& table = SystemTable::canonical();
  for (const auto& [sys_name, observations] : record.systems) {
    const auto sys = table.parse_system(sys_name);
    if (!sys) throw InvalidRecord("unknown system '" + sys_name + "'");
    for (const auto& obs : observations) {
      const auto owner = table.system_of(obs.indicator);
      if (!owner) throw InvalidRecord("unknown indicator '" + obs.indicator + "'");
      if (*owner != *sys) {
        throw InvalidRecord("indicator '" + obs.indicator + "' belongs to " +
                            std::string(table.name(*owner)) + ", not " + sys_name);
      }
      if (!std::isfinite(obs.time_h) || obs.time_h < 0.0) {
        throw InvalidRecord("indicator '" + obs.indicator + "': time must be >= 0");
      }
      if (!std::isfinite(obs.value)) {
        throw InvalidRecord("indicator '" + obs.indicator + "': non-finite value");
      }
    }
  }
  for (const auto& t : record.treatments) {
    if (t.drug.empty()) throw InvalidRecord("treatment with empty drug name");
    if (!std::isfinite(t.time_h) || t.time_h < 0.0) {
      throw InvalidRecord("treatment '" + t.drug + "': time must be >= 0");
    }
    if (!std::isfinite(t.dose) || t.dose < 0.0) {
      throw InvalidRecord("treatment '" + t.drug + "': dose must be >= 0");
    }
  }
  if (record.sofa_score && *record.sofa_score < 0) throw InvalidRecord("sofa_score < 0");
}

const IndicatorSeries* IndicatorGrid::find(std::string_view indicator) const {
  // Series carry bare names; accept the qualified form too.
  if (const auto* info = SystemTable::canonical().find(indicator)) indicator = info->name;
  for (const auto& s : series) {
    if (s.indicator == indicator) return &s;
  }
  return nullptr;
}

IndicatorSeries* IndicatorGrid::find(std::string_view indicator) {
  return const_cast<IndicatorSeries*>(std::as_const(*this).find(indicator));
}

std::vector<const IndicatorSeries*> IndicatorGrid::system_series(System s) const {
  std::vector<const IndicatorSeries*> out;
  for (const auto& ser : series) {
    if (ser.system == s && ser.available) out.push_back(&ser);
  }
  return out;
}

namespace {

IndicatorGrid resample_impl(const std::vector<RawObservation>& observations, double step_h,
                            std::size_t min_length, const std::vector<std::string>& declared) {
  if (!(step_h > 0.0) || !std::isfinite(step_h)) {
    throw ValidationError("resample_to_grid: step_h must be > 0");
  }
  const auto& table = SystemTable::canonical();
  std::size_t length = min_length;
  for (const auto& obs : observations) {
    if (!std::isfinite(obs.value)) {
      throw InvalidRecord("indicator '" + obs.indicator + "' has a non-finite value at t=" +
                          std::to_string(obs.time_h) + "h");
    }
    if (!std::isfinite(obs.time_h) || obs.time_h < 0.0) {
      throw InvalidRecord("indicator '" + obs.indicator + "' has a negative or non-finite time");
    }
    if (!table.find(obs.indicator)) {
      throw InvalidRecord("unknown indicator '" + obs.indicator + "'");
    }
    const auto cell = static_cast<std::size_t>(std::floor(obs.time_h / step_h));
    length = std::max(length, cell + 1);
  }

  // Collect the indicator set in table order.
  std::vector<const IndicatorInfo*> infos;
  auto add = [&](std::string_view name) {
    const IndicatorInfo* info = table.find(name);
    if (!info) throw InvalidRecord("unknown indicator '" + std::string(name) + "'");
    if (std::find(infos.begin(), infos.end(), info) == infos.end()) infos.push_back(info);
  };
  for (const auto& name : declared) add(name);
  for (const auto& obs : observations) add(obs.indicator);
  std::sort(infos.begin(), infos.end(),
            [](const auto* a, const auto* b) { return a->global_index < b->global_index; });

  IndicatorGrid grid;
  grid.start_h = 0.0;
  grid.step_h = step_h;
  grid.length = length;
  std::vector<std::vector<double>> sums(infos.size(), std::vector<double>(length, 0.0));
  std::vector<std::vector<int>> counts(infos.size(), std::vector<int>(length, 0));
  auto slot_of = [&](std::string_view name) {
    const IndicatorInfo* info = table.find(name);
    return static_cast<std::size_t>(std::find(infos.begin(), infos.end(), info) - infos.begin());
  };
  for (const auto& obs : observations) {
    const std::size_t slot = slot_of(obs.indicator);
    const auto cell = static_cast<std::size_t>(std::floor(obs.time_h / step_h));
    sums[slot][cell] += obs.value;
    counts[slot][cell] += 1;
  }
  for (std::size_t i = 0; i < infos.size(); ++i) {
    IndicatorSeries s;
    s.indicator = infos[i]->name;
    s.system = infos[i]->system;
    s.values.assign(length, std::numeric_limits<double>::quiet_NaN());
    s.observed.assign(length, false);
    s.decay.assign(length, 1.0);
    bool any = false;
    for (std::size_t c = 0; c < length; ++c) {
      if (counts[i][c] > 0) {
        s.values[c] = sums[i][c] / counts[i][c];
        s.observed[c] = true;
        any = true;
      }
    }
    s.available = any;
    grid.series.push_back(std::move(s));
  }
  return grid;
}

}  // namespace

IndicatorGrid resample_to_grid(const std::vector<RawObservation>& observations, double step_h,
                               std::size_t min_length) {
  return resample_impl(observations, step_h, min_length, {});
}

IndicatorGrid forward_impute(IndicatorGrid grid) {
  for (auto& s : grid.series) {
    std::size_t first = s.values.size();
    for (std::size_t i = 0; i < s.observed.size(); ++i) {
      if (s.observed[i]) {
        first = i;
        break;
      }
    }
    if (first == s.values.size()) {
      s.available = false;
      continue;
    }
    s.available = true;
    for (std::size_t i = 0; i < first; ++i) s.values[i] = s.values[first];
    double last = s.values[first];
    for (std::size_t i = first; i < s.values.size(); ++i) {
      if (s.observed[i]) {
        last = s.values[i];
      } else {
        s.values[i] = last;
      }
    }
  }
  return grid;
}

IndicatorGrid apply_masked_decay(IndicatorGrid grid, double tau_steps) {
  if (!(tau_steps > 0.0)) throw ValidationError("apply_masked_decay: tau must be > 0");
  for (auto& s : grid.series) {
    const std::size_t n = s.observed.size();
    s.decay.assign(n, 1.0);
    if (!s.available) continue;
    constexpr std::size_t kFar = std::numeric_limits<std::size_t>::max() / 2;
    std::vector<std::size_t> dist(n, kFar);
    std::size_t last = kFar;
    for (std::size_t i = 0; i < n; ++i) {
      if (s.observed[i]) last = i;
      if (last != kFar) dist[i] = i - last;
    }
    last = kFar;
    for (std::size_t i = n; i-- > 0;) {
      if (s.observed[i]) last = i;
      if (last != kFar) dist[i] = std::min(dist[i], last - i);
    }
    for (std::size_t i = 0; i < n; ++i) {
      s.decay[i] = s.observed[i] ? 1.0 : std::exp(-static_cast<double>(dist[i]) / tau_steps);
    }
  }
  return grid;
}

IndicatorGrid preprocess(const PatientRecord& record, const PreprocessConfig& cfg) {
  const auto& table = SystemTable::canonical();
  std::vector<RawObservation> all;
  std::vector<std::string> declared;
  for (const auto& [sys_name, observations] : record.systems) {
    const auto sys = table.parse_system(sys_name);
    if (!sys) throw InvalidRecord("unknown system '" + sys_name + "'");
    for (const auto& info : table.indicators(*sys)) declared.push_back(info.name);
    all.insert(all.end(), observations.begin(), observations.end());
  }
  IndicatorGrid grid = resample_impl(all, cfg.step_h, 0, declared);
  return apply_masked_decay(forward_impute(std::move(grid)), cfg.tau_steps);
}

std::size_t window_count(std::size_t length, std::size_t w, std::size_t s) {
  if (w == 0 || s == 0 || length < w + 1) return 0;
  return (length - w - 1) / s + 1;
}

std::vector<TreatmentEvent> treatments_between(const std::vector<TreatmentEvent>& all,
                                               double from_h, double to_h) {
  std::vector<TreatmentEvent> out;
  for (const auto& t : all) {
    if (t.time_h >= from_h && t.time_h <= to_h) out.push_back(t);
  }
  return out;
}

std::vector<WindowSample> extract_windows(const IndicatorGrid& grid, System system,
                                          const WindowConfig& cfg, const PatientRecord* record) {
  if (cfg.w == 0 || cfg.s == 0) throw ValidationError("extract_windows: w and s must be >= 1");
  std::vector<WindowSample> out;
  const auto series = grid.system_series(system);
  if (series.empty()) return out;
  const std::size_t count = window_count(grid.length, cfg.w, cfg.s);
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t start = k * cfg.s;
    WindowSample ws;
    if (record) ws.patient_id = record->patient_id;
    ws.system = system;
    ws.start_index = start;
    ws.target_index = start + cfg.w;
    ws.window_start_h = grid.time_at(start);
    ws.window_end_h = grid.time_at(start + cfg.w - 1);
    ws.target_time_h = grid.time_at(ws.target_index);
    ws.window_config = cfg;
    for (const auto* s : series) {
      ws.indicators.push_back(s->indicator);
      ws.values.emplace_back(s->values.begin() + static_cast<std::ptrdiff_t>(start),
                             s->values.begin() + static_cast<std::ptrdiff_t>(start + cfg.w));
      ws.decay.emplace_back(s->decay.begin() + static_cast<std::ptrdiff_t>(start),
                            s->decay.begin() + static_cast<std::ptrdiff_t>(start + cfg.w));
      ws.target.push_back(s->values[ws.target_index]);
    }
    if (record) {
      ws.treatments_in_scope =
          treatments_between(record->treatments, ws.window_start_h, ws.target_time_h);
    }
    out.push_back(std::move(ws));
  }
  return out;
}

std::string_view stratum_label(SofaStratum s) {
  switch (s) {
    case SofaStratum::Low: return "≤2";
    case SofaStratum::Mid: return "3–6";
    case SofaStratum::High: return "≥7";
  }
  return "?";
}

SofaStratum stratum_of(int sofa) {
  if (sofa <= 2) return SofaStratum::Low;
  if (sofa <= 6) return SofaStratum::Mid;
  return SofaStratum::High;
}

Strata stratify_by_sofa(const std::vector<PatientRecord>& records) {
  Strata out;
  for (auto s : {SofaStratum::Low, SofaStratum::Mid, SofaStratum::High}) out.groups[s];
  for (const auto& r : records) {
    if (r.sofa_score) {
      out.groups[stratum_of(*r.sofa_score)].push_back(&r);
    } else {
      out.unscored.push_back(&r);
    }
  }
  return out;
}

}  // namespace organsim

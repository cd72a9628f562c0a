#include "organsim/synthetic.hpp"

#include <cmath>
#include <numbers>

#include "organsim/hashing.hpp"
#include "organsim/numfmt.hpp"

namespace organsim {

namespace {

constexpr const char* kFluid = "Fluid resuscitation";
constexpr const char* kPressor = "Norepinephrine infusion";

template <typename T>
const T& pick(const std::vector<T>& v, NormalStream& rng) {
  return v[static_cast<std::size_t>(rng.uniform() * static_cast<double>(v.size())) % v.size()];
}

struct Profile {
  double base;
  double sd;  // per-step innovation
};

Profile profile_for(const IndicatorInfo& info) {
  static const std::map<std::string, Profile> known{
      {"pH", {7.38, 0.01}},
      {"pCO2", {40.0, 0.8}},
      {"pO2", {95.0, 2.0}},
      {"Respiratory Rate", {18.0, 0.6}},
      {"O2 saturation pulseoxymetry", {96.0, 0.4}},
      {"Hemoglobin", {11.0, 0.1}},
      {"Platelet Count", {210.0, 4.0}},
      {"Lactate", {2.0, 0.1}},
      {"D-Dimer", {1.5, 0.08}},
      {"White Blood Cells", {10.0, 0.3}},
      {"Temperature Fahrenheit", {98.6, 0.2}},
      {"GCS", {14.0, 0.2}},
      {"Heart Rate", {88.0, 1.5}},
      {"Non Invasive Blood Pressure systolic", {112.0, 2.0}},
      {"Non Invasive Blood Pressure diastolic", {62.0, 1.2}},
      {"Non Invasive Blood Pressure mean", {78.0, 1.4}},
      {"Arterial Blood Pressure systolic", {115.0, 2.0}},
      {"Arterial Blood Pressure diastolic", {60.0, 1.2}},
      {"Arterial Blood Pressure mean", {79.0, 1.4}},
      {"Lactate Dehydrogenase", {240.0, 5.0}},
      {"Creatinine", {1.1, 0.03}},
      {"Potassium", {4.1, 0.05}},
      {"Sodium", {139.0, 0.5}},
      {"Anion Gap", {12.0, 0.3}},
      {"Glucose Blood", {130.0, 4.0}},
  };
  if (auto it = known.find(info.name); it != known.end()) return it->second;
  // Deterministic filler for the remaining indicators.
  const double u = unit_double(splitmix64(hash_text(info.qualified)));
  const double base = 5.0 + 95.0 * u;
  return {base, 0.015 * base};
}

}  // namespace

double NormalStream::uniform() {
  state_ += 0x9E3779B97F4A7C15ULL;
  return unit_double(splitmix64(state_));
}

double NormalStream::next() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  have_spare_ = true;
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

BaseInfo synthetic_base_info(std::uint64_t seed) {
  NormalStream rng(seed);
  BaseInfo b;
  b.sex = pick(sex_vocabulary(), rng);
  b.age_years = round_to(25.0 + 60.0 * rng.uniform(), 1);
  b.height_cm = round_to((b.sex == "female" ? 162.0 : 175.0) + 7.0 * rng.next(), 1);
  b.weight_kg = round_to(std::max(40.0, 75.0 + 14.0 * rng.next()), 1);
  const std::vector<std::string> conditions{"hypertension", "type 2 diabetes", "COPD",
                                            "chronic kidney disease", "atrial fibrillation"};
  for (const auto& c : conditions) {
    if (rng.uniform() < 0.25) b.history.push_back(c);
  }
  b.smoking = rng.uniform() < 0.3;
  b.drinking = rng.uniform() < 0.3;
  b.insurance = pick(insurance_vocabulary(), rng);
  b.region = pick(region_vocabulary(), rng);
  b.marital_status = pick(marital_vocabulary(), rng);
  b.icu_type = pick(icu_type_vocabulary(), rng);
  return b;
}

OrchestratorConfig CoupledCohort::run_config() const {
  const auto& table = SystemTable::canonical();
  OrchestratorConfig c;
  c.systems = {table.find_qualified(target)->system};
  c.mechanism = ReferenceMechanism::Rl;
  c.simulator.config = surrogate.to_json();
  c.analyzer.config = surrogate.to_json();
  return c;
}

CoupledCohort make_coupled_cohort(const CoupledCohortConfig& cfg) {
  const auto& table = SystemTable::canonical();
  CoupledCohort out;
  const auto* target = table.find_qualified("Respiratory.pO2");
  const auto* driver = table.find_qualified("Cardiovascular.Arterial Blood Pressure mean");
  out.target = target->qualified;
  out.driver = driver->qualified;

  std::vector<const IndicatorInfo*> pool;
  for (const auto& info : table.all()) {
    if (info.system != System::Respiratory && &info != driver) pool.push_back(&info);
  }
  std::vector<const IndicatorInfo*> decoys;
  const std::size_t stride = std::max<std::size_t>(1, pool.size() / std::max<std::size_t>(1, cfg.decoys));
  for (std::size_t k = 0; k < pool.size() && decoys.size() < cfg.decoys; k += stride) {
    decoys.push_back(pool[k]);
  }
  for (const auto* d : decoys) out.decoys.push_back(d->qualified);

  out.surrogate.couplings.push_back({out.target, out.driver, cfg.coefficient, cfg.driver_baseline});
  out.surrogate.distractor_coupling = cfg.distractor_coupling;

  for (std::size_t p = 0; p < cfg.patients; ++p) {
    const auto pseed = mix_seed(cfg.seed, p);
    NormalStream rng(pseed);
    PatientRecord r;
    r.patient_id = "SYN-C" + std::to_string(p + 1);
    r.base_info = synthetic_base_info(mix_seed(pseed, 1));
    r.sofa_score = static_cast<int>(rng.uniform() * 13.0);

    std::vector<double> drv(cfg.length), tgt(cfg.length);
    double x = cfg.driver_sd * rng.next();
    double y = round_to(90.0 + 5.0 * rng.next(), 2);
    for (std::size_t t = 0; t < cfg.length; ++t) {
      drv[t] = cfg.driver_baseline + 0.2 * std::round(x / 0.2);
      tgt[t] = y;
      y = round_to(y + cfg.coefficient * (drv[t] - cfg.driver_baseline), 2);
      x = cfg.driver_ar * x + cfg.driver_sd * std::sqrt(1.0 - cfg.driver_ar * cfg.driver_ar) * rng.next();
    }
    for (std::size_t t = 0; t < cfg.length; ++t) {
      const double th = 0.5 * static_cast<double>(t);
      r.systems[std::string(table.name(target->system))].push_back({target->name, th, tgt[t]});
      r.systems[std::string(table.name(driver->system))].push_back(
          {driver->name, th, round_to(drv[t], driver->decimals)});
    }
    for (const auto* d : decoys) {
      const auto prof = profile_for(*d);
      auto& obs = r.systems[std::string(table.name(d->system))];
      for (std::size_t t = 0; t < cfg.length; ++t) {
        const double v = prof.base + cfg.decoy_sd * rng.next();
        obs.push_back({d->name, 0.5 * static_cast<double>(t), round_to(v, d->decimals)});
      }
    }
    r.provenance.push_back("synthetic coupled cohort seed " + std::to_string(cfg.seed));
    out.records.push_back(std::move(r));
  }
  return out;
}

PatientRecord make_synthetic_patient(const std::string& patient_id, std::uint64_t seed,
                                     std::size_t length) {
  const auto& table = SystemTable::canonical();
  NormalStream rng(seed);
  PatientRecord r;
  r.patient_id = patient_id;
  r.base_info = synthetic_base_info(mix_seed(seed, 1));
  r.sofa_score = static_cast<int>(rng.uniform() * 13.0);

  const double fluid_h = 0.5;
  const double fluid_dose = 500.0;
  const double pressor_h = 2.0 + 0.5 * std::floor(rng.uniform() * 4.0);
  r.treatments.push_back({kFluid, fluid_h, fluid_dose});
  for (int k = 0; k < 3; ++k) r.treatments.push_back({kPressor, pressor_h + 1.0 * k, 0.1});
  sort_treatments(r.treatments);

  for (const auto& info : table.all()) {
    const auto prof = profile_for(info);
    auto& obs = r.systems[std::string(table.name(info.system))];
    double dev = 0.0;
    for (std::size_t t = 0; t < length; ++t) {
      const double th = 0.5 * static_cast<double>(t);
      double v = prof.base + dev;
      if (info.name == "Non Invasive Blood Pressure systolic" && th >= fluid_h && th < fluid_h + 3.0) {
        v += 0.01 * fluid_dose;
      }
      obs.push_back({info.name, th, round_to(v, info.decimals)});
      dev = 0.8 * dev + prof.sd * rng.next();
    }
  }
  r.provenance.push_back("synthetic patient seed " + std::to_string(seed));
  return r;
}

std::vector<PatientRecord> make_synthetic_cohort(std::size_t n, std::uint64_t seed, std::size_t length) {
  std::vector<PatientRecord> out;
  for (std::size_t p = 0; p < n; ++p) {
    out.push_back(make_synthetic_patient("SYN-" + std::to_string(p + 1), mix_seed(seed, p), length));
  }
  return out;
}

SurrogateConfig synthetic_surrogate_config() {
  SurrogateConfig c;
  c.drug_effects.push_back(
      {kFluid, "Cardiovascular.Non Invasive Blood Pressure systolic", 0.01, 3.0});
  c.drug_effects.push_back({kPressor, "Cardiovascular.Non Invasive Blood Pressure mean", 10.0, 1.0});
  return c;
}

}  // namespace organsim

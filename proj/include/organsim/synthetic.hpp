#pragma once

// Generated cohorts for tests, demos and the correlator learning check.
// Values are quantised to each indicator's rendered decimals so a replay
// primed from the grid reproduces it exactly.

#include <string>
#include <vector>

#include "organsim/backends.hpp"
#include "organsim/orchestrator.hpp"

namespace organsim {

// Deterministic standard normal stream (Box-Muller over splitmix64).
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : state_(seed) {}
  double next();
  double uniform();

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

BaseInfo synthetic_base_info(std::uint64_t seed);

// One external indicator drives the target through
//   y[t+1] = y[t] + coefficient * (driver[t] - driver_baseline)
// while the decoys are independent noise.
struct CoupledCohortConfig {
  std::size_t patients = 100;
  std::size_t length = 40;  // grid cells
  std::size_t decoys = 20;
  double coefficient = 0.5;
  double driver_baseline = 80.0;
  double driver_sd = 3.0;
  double driver_ar = 0.7;
  double decoy_sd = 2.0;
  double distractor_coupling = 0.5;
  std::uint64_t seed = 7;
};

struct CoupledCohort {
  std::vector<PatientRecord> records;
  std::string target;  // qualified
  std::string driver;  // qualified
  std::vector<std::string> decoys;
  SurrogateConfig surrogate;

  // Target system only, surrogate agents, rl mechanism.
  OrchestratorConfig run_config() const;
};

CoupledCohort make_coupled_cohort(const CoupledCohortConfig& cfg = {});

// A patient observing all nine systems once per grid cell, with a fluid
// bolus and a vasopressor course.
PatientRecord make_synthetic_patient(const std::string& patient_id, std::uint64_t seed,
                                     std::size_t length = 36);
std::vector<PatientRecord> make_synthetic_cohort(std::size_t n, std::uint64_t seed,
                                                 std::size_t length = 36);

// Surrogate settings matching make_synthetic_patient's drug responses.
SurrogateConfig synthetic_surrogate_config();

}  // namespace organsim

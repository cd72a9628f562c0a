#pragma once

// Runs the multi-agent loop over a patient's grid: analyzer, correlator,
// two-stage simulator, reward, gate and compensation for every system at
// every step, recording everything needed to audit or replay the run.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "organsim/backends.hpp"
#include "organsim/cohort.hpp"
#include "organsim/compensator.hpp"
#include "organsim/objectives.hpp"
#include "organsim/policy.hpp"
#include "organsim/ppo.hpp"

namespace organsim {

enum class RunMode { TeacherForced, FreeRunning };
std::string_view run_mode_name(RunMode m);
RunMode parse_run_mode(std::string_view s);  // ValidationError

enum class ReferenceMechanism { Rl, RuleBased, None, Backend };
std::string_view mechanism_name(ReferenceMechanism m);
ReferenceMechanism parse_mechanism(std::string_view s);

struct PromptToggles {
  bool baseinfo = true;
  bool treatment = true;
  bool summary = true;
  bool residual_history = true;
};

struct OrchestratorConfig {
  PreprocessConfig preprocess;
  WindowConfig window;
  std::size_t horizon = 24;
  std::optional<std::size_t> start_index;  // first predicted grid index, default w
  RunMode mode = RunMode::TeacherForced;
  std::vector<System> systems{kAllSystems.begin(), kAllSystems.end()};

  BackendDescriptor simulator;
  BackendDescriptor analyzer;
  BackendDescriptor correlator;   // used by ReferenceMechanism::Backend
  BackendDescriptor compensator;  // used by CompensatorConfig::Estimator::Backend

  ReferenceMechanism mechanism = ReferenceMechanism::None;
  bool greedy = false;  // rl: take p > 0.5 instead of sampling
  std::optional<std::string> policy_path;
  std::map<System, std::vector<std::string>> rule_references;

  PpoConfig ppo;
  CompensatorConfig compensator_cfg;
  std::size_t summary_rows = 8;  // most recent rows shown to the agents
  PromptToggles toggles;
  std::uint64_t seed = 0;
  bool parallel_systems = false;

  void validate() const;
  nlohmann::json to_json() const;
  // Strict: unknown keys are rejected. Missing keys keep their defaults.
  static OrchestratorConfig from_json(const nlohmann::json& j);
  std::string digest() const;
};

struct SimulationStep {
  std::size_t t_index = 0;     // 0-based step of the run
  std::size_t grid_index = 0;  // predicted grid cell
  double time_h = 0.0;         // time of the predicted cell
  System system = System::Respiratory;
  bool valid = true;
  bool skipped = false;  // system has no available indicator
  bool reward_valid = false;
  std::vector<std::string> violations;

  std::vector<std::string> indicators;  // qualified
  std::map<std::string, std::string> prompts;  // analyzer, correlator, simulator_s1, simulator_s2, compensator
  std::map<std::string, std::string> outputs;

  std::vector<std::string> candidates;
  std::vector<double> candidate_probs;
  std::vector<bool> action;
  double log_prob_old = 0.0;
  std::vector<std::string> references;

  std::vector<double> baseline_values;
  std::vector<double> baseline_confidences;
  std::vector<double> referenced_values;
  std::vector<double> confidences;
  std::vector<double> truth;  // NaN when the truth is unavailable
  RewardRecord reward;
  std::vector<bool> gated;
  ResidualEstimate residuals;
  std::vector<double> final_values;
  std::optional<SummaryRow> summary_row;

  nlohmann::json to_json() const;
  static SimulationStep from_json(const nlohmann::json& j);
};

struct SimulationRun {
  std::string run_id;
  std::string patient_id;
  RunMode mode = RunMode::TeacherForced;
  std::uint64_t seed = 0;
  OrchestratorConfig config;
  std::optional<std::string> parent_run_id;
  std::vector<std::string> provenance;
  std::size_t start_index = 0;
  std::size_t horizon = 0;
  std::vector<SimulationStep> steps;  // ordered by (t_index, system order)

  const SimulationStep* step(std::size_t t_index, System system) const;
  std::vector<const SimulationStep*> steps_at(std::size_t t_index) const;

  nlohmann::json to_json() const;
  static SimulationRun from_json(const nlohmann::json& j);
};

// True when both runs hold byte-identical step records.
bool same_records(const SimulationRun& a, const SimulationRun& b);

// Optional injected services; anything left empty is built from the config.
struct RunServices {
  std::shared_ptr<const AgentBackend> simulator;
  std::shared_ptr<const AgentBackend> analyzer;
  std::shared_ptr<const AgentBackend> correlator;
  std::shared_ptr<const AgentBackend> compensator;
  std::shared_ptr<const PolicyParams> policy;
  // Per-system EMA reward baselines, read and advanced in place.
  std::map<System, double>* baselines = nullptr;
  // When set, every valid RL step with a non-empty candidate set is appended.
  std::vector<Transition>* transitions = nullptr;
  // Compensator gain, read and (in training mode) updated in place.
  double* compensator_gain = nullptr;
};

// Throws RunRejected when the grid is shorter than w + 1.
SimulationRun run_simulation(const PatientRecord& record, const OrchestratorConfig& cfg,
                             const RunServices& services = {});

// Fills `cache_dir` so that a replay simulator reproduces the ground truth.
void prime_replay_with_truth(const PatientRecord& record, const OrchestratorConfig& cfg,
                             const std::string& cache_dir);

// Treatments between two times, grouped per drug in first-seen order.
TreatmentBlock treatment_block(const std::vector<TreatmentEvent>& events);

}  // namespace organsim

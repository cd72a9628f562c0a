#pragma once

// Rollout collection and the PPO training loop for the correlator policy.

#include <functional>
#include <map>
#include <vector>

#include <json.hpp>

#include "organsim/orchestrator.hpp"
#include "organsim/ppo.hpp"

namespace organsim {

// Runs `cfg` (forced to the rl mechanism) on each record with `params` and
// returns every transition. `baselines` carries the per-system EMA across calls.
std::vector<Transition> collect_rollouts(const std::vector<PatientRecord>& records,
                                         const OrchestratorConfig& cfg, const PolicyParams& params,
                                         std::map<System, double>& baselines);

struct TrainConfig {
  OrchestratorConfig run;
  std::size_t steps = 200;
  std::size_t patients_per_step = 4;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::Adam;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);  // strict
};

struct TrainStepLog {
  std::size_t step = 0;
  double mean_reward = 0.0;
  std::size_t transitions = 0;
  TrainDiagnostics diag;  // last minibatch of the step
};

struct TrainResult {
  PolicyParams params;
  std::vector<TrainStepLog> log;
  std::map<System, double> baselines;

  // Mean of the per-step mean rewards over the last `n` steps.
  double tail_mean_reward(std::size_t n) const;
};

using TrainProgress = std::function<void(const TrainStepLog&)>;

TrainResult train_correlator(const std::vector<PatientRecord>& cohort, const TrainConfig& cfg,
                             PolicyParams init = {}, const TrainProgress& progress = {});

}  // namespace organsim

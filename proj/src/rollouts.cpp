#include "organsim/rollouts.hpp"

#include <algorithm>

#include "organsim/errors.hpp"
#include "organsim/hashing.hpp"

namespace organsim {

using nlohmann::json;

std::vector<Transition> collect_rollouts(const std::vector<PatientRecord>& records,
                                         const OrchestratorConfig& cfg, const PolicyParams& params,
                                         std::map<System, double>& baselines) {
  OrchestratorConfig run_cfg = cfg;
  run_cfg.mechanism = ReferenceMechanism::Rl;
  run_cfg.greedy = false;
  const auto policy = std::make_shared<const PolicyParams>(params);
  std::vector<Transition> out;
  for (const auto& r : records) {
    RunServices svc;
    svc.policy = policy;
    svc.baselines = &baselines;
    svc.transitions = &out;
    run_simulation(r, run_cfg, svc);
  }
  return out;
}

void TrainConfig::validate() const {
  run.validate();
  if (steps == 0) throw ValidationError("train: steps must be positive");
  if (patients_per_step == 0) throw ValidationError("train: patients_per_step must be positive");
}

json TrainConfig::to_json() const {
  return {{"run", run.to_json()},
          {"steps", steps},
          {"patients_per_step", patients_per_step},
          {"seed", seed},
          {"optimizer", optimizer == Optimizer::Adam ? "adam" : "sgd"}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("train config must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k != "run" && k != "steps" && k != "patients_per_step" && k != "seed" && k != "optimizer") {
      throw ValidationError("train config: unknown key '" + k + "'");
    }
  }
  TrainConfig c;
  try {
    if (j.contains("run")) c.run = OrchestratorConfig::from_json(j.at("run"));
    c.steps = j.value("steps", c.steps);
    c.patients_per_step = j.value("patients_per_step", c.patients_per_step);
    c.seed = j.value("seed", c.seed);
    const auto opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") {
      c.optimizer = Optimizer::Adam;
    } else if (opt == "sgd") {
      c.optimizer = Optimizer::Sgd;
    } else {
      throw ValidationError("train config: unknown optimizer '" + opt + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double TrainResult::tail_mean_reward(std::size_t n) const {
  if (log.empty()) return 0.0;
  const std::size_t from = log.size() > n ? log.size() - n : 0;
  double s = 0.0;
  for (std::size_t i = from; i < log.size(); ++i) s += log[i].mean_reward;
  return s / static_cast<double>(log.size() - from);
}

TrainResult train_correlator(const std::vector<PatientRecord>& cohort, const TrainConfig& cfg,
                             PolicyParams init, const TrainProgress& progress) {
  cfg.validate();
  if (cohort.empty()) throw ValidationError("train: empty cohort");
  PpoTrainer trainer(std::move(init), cfg.run.ppo, cfg.optimizer);
  TrainResult result;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<PatientRecord> picked;
    for (std::size_t j = 0; j < cfg.patients_per_step; ++j) {
      const auto h = mix_seed(cfg.seed, step * cfg.patients_per_step + j);
      picked.push_back(cohort[h % cohort.size()]);
    }
    OrchestratorConfig run_cfg = cfg.run;
    run_cfg.seed = mix_seed(cfg.seed ^ 0x7261696eULL, step);
    const auto transitions = collect_rollouts(picked, run_cfg, trainer.params(), result.baselines);

    TrainStepLog entry;
    entry.step = step;
    entry.transitions = transitions.size();
    for (const auto& t : transitions) entry.mean_reward += t.reward.reward;
    if (!transitions.empty()) entry.mean_reward /= static_cast<double>(transitions.size());

    const std::size_t bs = cfg.run.ppo.batch_size;
    for (std::size_t from = 0; from < transitions.size(); from += bs) {
      const auto n = std::min(bs, transitions.size() - from);
      entry.diag = trainer.step(std::span<const Transition>(transitions.data() + from, n));
    }
    if (progress) progress(entry);
    result.log.push_back(entry);
  }
  result.params = trainer.params();
  return result;
}

}  // namespace organsim

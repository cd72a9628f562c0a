#pragma once

// PPO trainer for the parametric correlator policy.

#include <string>
#include <vector>

#include "organsim/objectives.hpp"
#include "organsim/policy.hpp"

namespace organsim {

struct RewardRecord {
  double reward = 0.0;
  double baseline = 0.0;
  double advantage = 0.0;
  double mse_baseline = 0.0;
  double mse_referenced = 0.0;

  // r = mse_baseline - mse_referenced, A = r - b.
  static RewardRecord make(double mse_baseline, double mse_referenced, double baseline);
};

struct Transition {
  std::string patient_id;
  std::size_t t_index = 0;
  System system = System::Respiratory;
  std::vector<std::string> candidates;
  FeatureMatrix features;
  std::vector<bool> mask;
  double log_prob_old = 0.0;
  RewardRecord reward;
};

struct TrainDiagnostics {
  std::size_t transitions = 0;
  double loss = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double mean_advantage = 0.0;
  double mean_selected = 0.0;
  double mean_reward = 0.0;
  bool skipped = false;  // non-finite gradient
};

// Mean over the batch of ppo_clipped_loss + beta_s * sum(p) - beta_e * H(p).
// The sparsity term uses the expected L1 norm of the action, sum(p), which is
// the differentiable counterpart of ||a||_1.
double batch_objective(const PolicyParams& params, std::span<const Transition> batch,
                       const PpoConfig& cfg);
WeightTable batch_gradient(const PolicyParams& params, std::span<const Transition> batch,
                           const PpoConfig& cfg, TrainDiagnostics* diag = nullptr);

enum class Optimizer { Adam, Sgd };

class PpoTrainer {
 public:
  PpoTrainer(PolicyParams params, PpoConfig cfg, Optimizer opt = Optimizer::Adam);

  // One update per configured epoch over `batch`.
  TrainDiagnostics step(std::span<const Transition> batch);

  const PolicyParams& params() const noexcept { return params_; }
  const PpoConfig& config() const noexcept { return cfg_; }
  std::size_t updates() const noexcept { return t_; }

 private:
  PolicyParams params_;
  PpoConfig cfg_;
  Optimizer opt_;
  WeightTable m_, v_;
  std::size_t t_ = 0;
};

}  // namespace organsim

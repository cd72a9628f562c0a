#pragma once

// Scalar training objectives shared by the simulator calibration, the PPO
// correlator and the compensator.

#include <span>

namespace organsim {

struct PpoConfig {
  double epsilon_clip = 0.2;
  double alpha_ema = 0.9;
  double beta_sparsity = 0.015;
  double beta_entropy = 0.005;
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  std::size_t epochs = 1;

  void validate() const;  // throws ValidationError
};

// (pred - truth)^2 + lambda * (conf - exp(-|pred - truth|))^2
double sft_constraint_loss(double pred, double conf, double truth, double lambda = 1.0);
double confidence_target(double pred, double truth);

double compute_reward(double mse_baseline, double mse_referenced);
double ema_baseline_update(double b_prev, double r_prev, double alpha);

// -min(rho * A, clip(rho, 1 - eps, 1 + eps) * A), rho = exp(new - old)
double ppo_clipped_loss(double log_prob_new, double log_prob_old, double advantage, double epsilon);
// d loss / d log_prob_new
double ppo_clipped_loss_grad(double log_prob_new, double log_prob_old, double advantage,
                             double epsilon);

// Sum of independent Bernoulli entropies (nats), 0 ln 0 := 0.
double policy_entropy(std::span<const double> probs);
double bernoulli_entropy(double p);

double rl_total_loss(double ppo, double action_l1, double entropy, const PpoConfig& cfg);
double rl_total_loss(double ppo, double action_l1, double entropy, double beta_sparsity,
                     double beta_entropy);

// (e_hat - (pred - truth)^2)^2
double residual_loss(double e_hat, double pred, double truth);
// (e_hat - (truth - pred))^2: the signed target used by the additive correction.
double signed_residual_loss(double e_hat, double pred, double truth);

double sigmoid(double z);
// log(sigmoid(z)) and log(1 - sigmoid(z)) without cancellation.
double log_sigmoid(double z);
double log_one_minus_sigmoid(double z);

}  // namespace organsim

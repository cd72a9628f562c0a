#include "organsim/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "organsim/errors.hpp"

namespace organsim {

void PpoConfig::validate() const {
  if (!(epsilon_clip > 0.0 && epsilon_clip < 1.0)) throw ValidationError("epsilon_clip must be in (0,1)");
  if (!(alpha_ema > 0.0 && alpha_ema < 1.0)) throw ValidationError("alpha_ema must be in (0,1)");
  if (!(beta_sparsity >= 0.0) || !(beta_entropy >= 0.0)) {
    throw ValidationError("regularizer weights must be non-negative");
  }
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (epochs == 0) throw ValidationError("epochs must be positive");
}

double sft_constraint_loss(double pred, double conf, double truth, double lambda) {
  const double err = pred - truth;
  const double c = conf - std::exp(-std::fabs(err));
  return err * err + lambda * c * c;
}

double confidence_target(double pred, double truth) { return std::exp(-std::fabs(pred - truth)); }

double compute_reward(double mse_baseline, double mse_referenced) {
  return mse_baseline - mse_referenced;
}

double ema_baseline_update(double b_prev, double r_prev, double alpha) {
  return alpha * r_prev + (1.0 - alpha) * b_prev;
}

double ppo_clipped_loss(double log_prob_new, double log_prob_old, double advantage, double epsilon) {
  const double rho = std::exp(log_prob_new - log_prob_old);
  const double clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
  return -std::min(rho * advantage, clipped * advantage);
}

double ppo_clipped_loss_grad(double log_prob_new, double log_prob_old, double advantage,
                             double epsilon) {
  const double rho = std::exp(log_prob_new - log_prob_old);
  const double clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
  // The clipped branch is flat in rho; only the unclipped one carries gradient.
  if (rho * advantage <= clipped * advantage) return -advantage * rho;
  return 0.0;
}

double bernoulli_entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

double policy_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) h += bernoulli_entropy(p);
  return h;
}

double rl_total_loss(double ppo, double action_l1, double entropy, double beta_sparsity,
                     double beta_entropy) {
  return ppo + beta_sparsity * action_l1 - beta_entropy * entropy;
}

double rl_total_loss(double ppo, double action_l1, double entropy, const PpoConfig& cfg) {
  return rl_total_loss(ppo, action_l1, entropy, cfg.beta_sparsity, cfg.beta_entropy);
}

double residual_loss(double e_hat, double pred, double truth) {
  const double d = pred - truth;
  const double r = e_hat - d * d;
  return r * r;
}

double signed_residual_loss(double e_hat, double pred, double truth) {
  const double r = e_hat - (truth - pred);
  return r * r;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  if (z >= 0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

double log_one_minus_sigmoid(double z) { return log_sigmoid(-z); }

}  // namespace organsim

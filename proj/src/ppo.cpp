#include "organsim/ppo.hpp"

#include <cmath>

#include "organsim/kernels.hpp"

namespace organsim {

RewardRecord RewardRecord::make(double mse_baseline, double mse_referenced, double baseline) {
  RewardRecord r;
  r.mse_baseline = mse_baseline;
  r.mse_referenced = mse_referenced;
  r.reward = compute_reward(mse_baseline, mse_referenced);
  r.baseline = baseline;
  r.advantage = r.reward - baseline;
  return r;
}

double batch_objective(const PolicyParams& params, std::span<const Transition> batch,
                       const PpoConfig& cfg) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& tr : batch) {
    const auto z = params.logits(tr.system, tr.candidates, tr.features);
    const double lp = action_log_prob(tr.mask, z);
    double sum_p = 0.0, h = 0.0;
    for (double zi : z) {
      const double p = sigmoid(zi);
      sum_p += p;
      h += bernoulli_entropy(p);
    }
    total += rl_total_loss(ppo_clipped_loss(lp, tr.log_prob_old, tr.reward.advantage, cfg.epsilon_clip),
                           sum_p, h, cfg);
  }
  return total / static_cast<double>(batch.size());
}

WeightTable batch_gradient(const PolicyParams& params, std::span<const Transition> batch,
                           const PpoConfig& cfg, TrainDiagnostics* diag) {
  WeightTable grad;
  if (batch.empty()) return grad;
  const double inv = 1.0 / static_cast<double>(batch.size());
  double ratio_sum = 0.0, clipped = 0.0, adv = 0.0, sel = 0.0, rew = 0.0;
  for (const auto& tr : batch) {
    const auto z = params.logits(tr.system, tr.candidates, tr.features);
    const double lp = action_log_prob(tr.mask, z);
    const double rho = std::exp(lp - tr.log_prob_old);
    const double A = tr.reward.advantage;
    // d ppo / d log_prob_new; d log_prob / d z_i = a_i - p_i.
    const double g_lp = ppo_clipped_loss_grad(lp, tr.log_prob_old, A, cfg.epsilon_clip);
    ratio_sum += rho;
    if (rho < 1.0 - cfg.epsilon_clip || rho > 1.0 + cfg.epsilon_clip) clipped += 1.0;
    adv += A;
    rew += tr.reward.reward;
    auto& table = grad[tr.system];
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = sigmoid(z[i]);
      const double a = tr.mask[i] ? 1.0 : 0.0;
      sel += a;
      const double dz = g_lp * (a - p) + cfg.beta_sparsity * p * (1.0 - p) +
                        cfg.beta_entropy * z[i] * p * (1.0 - p);
      auto& g = table[tr.candidates[i]];
      if (g.empty()) g.assign(kFeatureCount, 0.0);
      kernels::axpy(dz * inv, tr.features[i], g);
    }
  }
  if (diag) {
    diag->transitions = batch.size();
    diag->mean_ratio = ratio_sum * inv;
    diag->clip_fraction = clipped * inv;
    diag->mean_advantage = adv * inv;
    diag->mean_selected = sel * inv;
    diag->mean_reward = rew * inv;
  }
  return grad;
}

PpoTrainer::PpoTrainer(PolicyParams params, PpoConfig cfg, Optimizer opt)
    : params_(std::move(params)), cfg_(cfg), opt_(opt) {
  cfg_.validate();
}

TrainDiagnostics PpoTrainer::step(std::span<const Transition> batch) {
  TrainDiagnostics diag;
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    TrainDiagnostics d;
    const auto grad = batch_gradient(params_, batch, cfg_, &d);
    bool finite = true;
    for (const auto& [sys, table] : grad) {
      for (const auto& [cand, g] : table) {
        for (double x : g) finite = finite && std::isfinite(x);
      }
    }
    if (epoch == 0) diag = d;
    if (!finite) {
      diag.skipped = true;
      break;
    }
    ++t_;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (const auto& [sys, table] : grad) {
      for (const auto& [cand, g] : table) {
        auto& w = params_.weights[sys][cand];
        if (w.empty()) w.assign(kFeatureCount, 0.0);
        if (opt_ == Optimizer::Sgd) {
          kernels::axpy(-cfg_.learning_rate, g, w);
          continue;
        }
        auto& m = m_[sys][cand];
        auto& v = v_[sys][cand];
        if (m.empty()) m.assign(kFeatureCount, 0.0), v.assign(kFeatureCount, 0.0);
        for (std::size_t k = 0; k < kFeatureCount; ++k) {
          m[k] = b1 * m[k] + (1.0 - b1) * g[k];
          v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
          w[k] -= cfg_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
        }
      }
    }
  }
  diag.loss = batch_objective(params_, batch, cfg_);
  return diag;
}

}  // namespace organsim

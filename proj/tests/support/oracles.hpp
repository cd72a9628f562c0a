#pragma once

// Independent reference implementations used by unit and acceptance tests.
// Deliberately naive: enumeration and long-double arithmetic only.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace oracle {

using ld = long double;

inline ld sft_constraint_loss(ld pred, ld conf, ld truth, ld lambda) {
  const ld e = pred - truth;
  const ld c = conf - std::exp(-std::fabs(e));
  return e * e + lambda * c * c;
}
inline ld confidence_target(ld pred, ld truth) { return std::exp(-std::fabs(pred - truth)); }
inline ld compute_reward(ld mse0, ld mse1) { return mse0 - mse1; }
inline ld ema(ld b, ld r, ld alpha) { return alpha * r + (1 - alpha) * b; }

inline ld ppo_clipped_loss(ld lp_new, ld lp_old, ld adv, ld eps) {
  const ld rho = std::exp(lp_new - lp_old);
  ld clipped = rho;
  if (clipped < 1 - eps) clipped = 1 - eps;
  if (clipped > 1 + eps) clipped = 1 + eps;
  const ld a = rho * adv, b = clipped * adv;
  return -(a < b ? a : b);
}

inline ld policy_entropy(const std::vector<double>& probs) {
  ld h = 0;
  for (double pd : probs) {
    const ld p = pd;
    if (p > 0) h -= p * std::log(p);
    if (p < 1) h -= (1 - p) * std::log(1 - p);
  }
  return h;
}

inline ld rl_total_loss(ld ppo, ld l1, ld ent, ld bs, ld be) { return ppo + bs * l1 - be * ent; }

inline ld residual_loss(ld e_hat, ld pred, ld truth) {
  const ld sq = (pred - truth) * (pred - truth);
  return (e_hat - sq) * (e_hat - sq);
}

inline double rel_err(ld got, ld want) {
  const ld d = std::fabs(got - want);
  const ld s = std::fabs(want);
  return static_cast<double>(s > 0 ? d / s : d);
}

// --- preprocessing -------------------------------------------------------

// Value carried into cell i: last observation at or before i, else the first
// observation after it.
inline std::vector<double> forward_fill(const std::vector<double>& v, const std::vector<bool>& obs) {
  const std::size_t n = v.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<std::size_t> src;
    for (std::size_t j = 0; j <= i; ++j)
      if (obs[j]) src = j;
    if (!src)
      for (std::size_t j = i; j < n && !src; ++j)
        if (obs[j]) src = j;
    out[i] = src ? v[*src] : v[i];
  }
  return out;
}

inline std::vector<double> decay(const std::vector<bool>& obs, double tau) {
  const std::size_t n = obs.size();
  std::vector<double> out(n, 1.0);
  bool any = false;
  for (bool b : obs) any = any || b;
  if (!any) return out;
  for (std::size_t i = 0; i < n; ++i) {
    if (obs[i]) continue;
    std::size_t best = n + 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (!obs[j]) continue;
      const std::size_t d = i > j ? i - j : j - i;
      if (d < best) best = d;
    }
    out[i] = std::exp(-static_cast<double>(best) / tau);
  }
  return out;
}

// Number of windows [k, k + w) whose next cell k + w is still on the grid.
inline std::size_t window_count(std::size_t T, std::size_t w, std::size_t s) {
  std::size_t n = 0;
  for (std::size_t k = 0; k < T; ++k) {
    if (k % s != 0) continue;
    if (k + w < T) ++n;
  }
  return n;
}

// --- pathway matching ----------------------------------------------------

// Size of the largest subset of events that are each within the grace window
// and pairwise order-consistent (no strictly inverted pair), by enumeration.
inline std::size_t best_assignment(const std::vector<std::optional<double>>& pred,
                                   const std::vector<std::optional<double>>& truth, double grace_h) {
  const std::size_t n = pred.size();
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    std::size_t size = 0;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (!(mask >> i & 1u)) continue;
      ++size;
      if (!pred[i] || !truth[i] || std::fabs(*pred[i] - *truth[i]) > grace_h) ok = false;
      for (std::size_t j = 0; j < i && ok; ++j) {
        if (!(mask >> j & 1u)) continue;
        if ((*truth[i] - *truth[j]) * (*pred[i] - *pred[j]) < 0) ok = false;
      }
    }
    if (ok && size > best) best = size;
  }
  return best;
}

}  // namespace oracle

#include "organsim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "organsim/errors.hpp"
#include "organsim/hashing.hpp"
#include "organsim/kernels.hpp"
#include "organsim/objectives.hpp"

namespace organsim {

using nlohmann::json;

const std::array<std::string_view, kFeatureCount>& feature_names() {
  static constexpr std::array<std::string_view, kFeatureCount> names{
      "bias",          "level_corr",      "lead_corr",          "last_z",
      "events_rise",   "events_fall",     "events_fluctuate",   "events_stable",
      "treatment_recency"};
  return names;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = std::min(a.size(), b.size());
  if (n < 2) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) ma += a[i], mb += b[i];
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  // Relative guard so that float noise on a flat series does not count.
  const double scale_a = std::max(std::fabs(ma), 1.0), scale_b = std::max(std::fabs(mb), 1.0);
  if (saa <= 1e-24 * scale_a * scale_a * static_cast<double>(n) ||
      sbb <= 1e-24 * scale_b * scale_b * static_cast<double>(n)) {
    return 0.0;
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

FeatureVector encode_candidate(const CorrelatorState& s, std::size_t c) {
  FeatureVector f{};
  f[0] = 1.0;
  const auto& cand = s.candidate_values.at(c);
  double level = 0.0, lead = 0.0;
  for (const auto& t : s.window.series) {
    level = std::max(level, std::fabs(pearson(cand, t.values)));
    if (t.values.size() >= 3 && cand.size() >= t.values.size()) {
      const std::size_t n = t.values.size();
      std::vector<double> inc(n - 1), prev(n - 1);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        inc[i] = t.values[i + 1] - t.values[i];
        prev[i] = cand[cand.size() - n + i];
      }
      lead = std::max(lead, std::fabs(pearson(prev, inc)));
    }
  }
  f[1] = level;
  f[2] = lead;
  if (!cand.empty()) {
    double mean = 0.0;
    for (double v : cand) mean += v;
    mean /= static_cast<double>(cand.size());
    double var = 0.0;
    for (double v : cand) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(cand.size()));
    if (sd > 1e-12 * std::max(std::fabs(mean), 1.0)) {
      f[3] = std::clamp((cand.back() - mean) / sd, -5.0, 5.0);
    }
  }
  std::array<double, 4> counts{};
  double total = 0.0;
  for (const auto& e : s.summary_events) {
    if (e.indicator != s.candidates[c]) continue;
    counts[static_cast<std::size_t>(e.type)] += 1.0;
    total += 1.0;
  }
  if (total > 0) {
    for (std::size_t k = 0; k < 4; ++k) f[4 + k] = counts[k] / total;
  }
  double latest = -1.0;
  for (const auto& t : s.treatments) {
    if (t.time_h <= s.current_time_h) latest = std::max(latest, t.time_h);
  }
  if (latest >= 0.0) f[8] = std::exp(-(s.current_time_h - latest) / 6.0);
  return f;
}

FeatureMatrix encode_state(const CorrelatorState& s) {
  if (s.candidates.size() != s.candidate_values.size()) {
    throw ValidationError("correlator state: candidates and values differ in length");
  }
  FeatureMatrix m;
  m.reserve(s.candidates.size());
  for (std::size_t c = 0; c < s.candidates.size(); ++c) m.push_back(encode_candidate(s, c));
  return m;
}

std::vector<double> PolicyParams::logits(System system, const std::vector<std::string>& candidates,
                                         const FeatureMatrix& features) const {
  std::vector<double> out(candidates.size(), 0.0);
  const auto sys = weights.find(system);
  if (sys == weights.end()) return out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto it = sys->second.find(candidates[i]);
    if (it == sys->second.end()) continue;
    out[i] = kernels::dot(it->second, features[i]);
  }
  return out;
}

json PolicyParams::to_json() const {
  json w = json::object();
  for (const auto& [sys, table] : weights) {
    json t = json::object();
    for (const auto& [cand, vec] : table) t[cand] = vec;
    w[std::string(system_name(sys))] = t;
  }
  json names = json::array();
  for (auto n : feature_names()) names.push_back(n);
  return {{"version", kVersion},
          {"table_version", SystemTable::canonical().version()},
          {"feature_map", names},
          {"weights", w}};
}

PolicyParams PolicyParams::from_json(const json& j) {
  if (j.value("version", std::string()) != kVersion) {
    throw ValidationError("policy checkpoint: unsupported version");
  }
  json names = json::array();
  for (auto n : feature_names()) names.push_back(n);
  if (j.value("feature_map", json()) != names) {
    throw ValidationError("policy checkpoint: feature map does not match this build");
  }
  PolicyParams p;
  const auto& table = SystemTable::canonical();
  for (const auto& [sys_name, t] : j.at("weights").items()) {
    const auto sys = table.parse_system(sys_name);
    if (!sys) throw ValidationError("policy checkpoint: unknown system '" + sys_name + "'");
    for (const auto& [cand, vec] : t.items()) {
      const auto* info = table.find_qualified(cand);
      if (!info || info->system == *sys) {
        throw ValidationError("policy checkpoint: invalid candidate '" + cand + "'");
      }
      auto v = vec.get<std::vector<double>>();
      if (v.size() != kFeatureCount ||
          !std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
        throw ValidationError("policy checkpoint: bad weight vector for '" + cand + "'");
      }
      p.weights[*sys][cand] = std::move(v);
    }
  }
  return p;
}

void PolicyParams::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write policy checkpoint '" + path + "'");
  out << to_json().dump(2) << '\n';
}

PolicyParams PolicyParams::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open policy checkpoint '" + path + "'");
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("policy checkpoint: ") + e.what());
  }
}

std::size_t ReferenceAction::selected_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

double SplitMixRng::uniform() {
  state_ = splitmix64(state_);
  return unit_double(state_);
}

double action_log_prob(const std::vector<bool>& mask, std::span<const double> logits) {
  double lp = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    lp += mask[i] ? log_sigmoid(logits[i]) : log_one_minus_sigmoid(logits[i]);
  }
  return lp;
}

double action_log_prob(std::span<const bool> mask, std::span<const double> logits) {
  return action_log_prob(std::vector<bool>(mask.begin(), mask.end()), logits);
}

ReferenceAction sample_action(std::span<const double> logits, SplitMixRng& rng) {
  ReferenceAction a;
  a.mask.resize(logits.size());
  a.probs.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    a.probs[i] = sigmoid(logits[i]);
    a.mask[i] = rng.uniform() < a.probs[i];
  }
  a.log_prob_old = action_log_prob(a.mask, logits);
  return a;
}

ReferenceAction greedy_action(std::span<const double> logits) {
  ReferenceAction a;
  a.mask.resize(logits.size());
  a.probs.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    a.probs[i] = sigmoid(logits[i]);
    a.mask[i] = a.probs[i] > 0.5;
  }
  a.log_prob_old = action_log_prob(a.mask, logits);
  return a;
}

}  // namespace organsim

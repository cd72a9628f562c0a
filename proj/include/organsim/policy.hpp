#pragma once

// Parametric reference-selection policy: each (target system, candidate) pair
// owns a weight vector over a fixed feature map; candidates are selected by
// independent Bernoulli draws with p = sigmoid(w . f).

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "organsim/cohort.hpp"
#include "organsim/grammar.hpp"

namespace organsim {

inline constexpr std::size_t kFeatureCount = 9;
using FeatureVector = std::array<double, kFeatureCount>;
using FeatureMatrix = std::vector<FeatureVector>;  // one row per candidate

const std::array<std::string_view, kFeatureCount>& feature_names();

struct CorrelatorState {
  System system = System::Respiratory;
  SystemWindowBlock window;                  // target system
  std::vector<SymbolicEvent> summary_events;  // recent events of every system
  std::vector<TreatmentEvent> treatments;
  double current_time_h = 0.0;
  std::vector<std::string> candidates;                // qualified, table order
  std::vector<std::vector<double>> candidate_values;  // window values per candidate
};

// Pearson correlation; 0 when either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

FeatureVector encode_candidate(const CorrelatorState& state, std::size_t candidate);
FeatureMatrix encode_state(const CorrelatorState& state);

using WeightTable = std::map<System, std::map<std::string, std::vector<double>>>;

struct PolicyParams {
  static constexpr std::string_view kVersion = "organsim-policy-v1";
  WeightTable weights;  // missing pairs read as zeros (p = 0.5)

  std::vector<double> logits(System system, const std::vector<std::string>& candidates,
                             const FeatureMatrix& features) const;

  nlohmann::json to_json() const;
  static PolicyParams from_json(const nlohmann::json& j);  // ValidationError on mismatch
  void save(const std::string& path) const;
  static PolicyParams load(const std::string& path);
};

struct ReferenceAction {
  std::vector<bool> mask;
  std::vector<double> probs;
  double log_prob_old = 0.0;

  std::size_t selected_count() const;
};

// Deterministic uniform stream used for action sampling.
class SplitMixRng {
 public:
  explicit SplitMixRng(std::uint64_t seed) : state_(seed) {}
  double uniform();

 private:
  std::uint64_t state_;
};

ReferenceAction sample_action(std::span<const double> logits, SplitMixRng& rng);
// Selects every candidate with p > 0.5.
ReferenceAction greedy_action(std::span<const double> logits);
double action_log_prob(std::span<const bool> mask, std::span<const double> logits);
double action_log_prob(const std::vector<bool>& mask, std::span<const double> logits);

}  // namespace organsim

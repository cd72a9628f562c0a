#pragma once

// Ordered threshold-crossing event chains and their matching metrics.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "organsim/cohort.hpp"

namespace organsim {

enum class EventDirection { RiseAbove, FallBelow, SecondFall };
std::string_view direction_name(EventDirection d);
EventDirection parse_direction(std::string_view s);

struct PathwayEvent {
  std::string indicator;  // qualified
  EventDirection direction = EventDirection::RiseAbove;
  std::optional<double> threshold;  // null = operator-supplied, not yet configured
};

struct PathwayDefinition {
  std::string name;
  std::vector<PathwayEvent> events;

  // At least three events, every indicator in the system table.
  void validate() const;
  bool thresholds_configured() const;
  nlohmann::json to_json() const;
  static PathwayDefinition from_json(const nlohmann::json& j);
};

// File layout: {"pathways": [ {name, events: [{indicator, direction, threshold}]} ]}
std::vector<PathwayDefinition> load_pathways(const std::string& path);

// Onset hour of each event, nullopt when the condition never holds or the
// indicator is unavailable. Throws ValidationError if a threshold is missing.
std::vector<std::optional<double>> detect_events(const IndicatorGrid& grid,
                                                 const PathwayDefinition& pathway);

struct EventMatch {
  std::size_t event = 0;
  bool matched = false;
  std::optional<double> predicted_onset_h;
  std::optional<double> true_onset_h;
  std::optional<double> predicted_value;
  std::optional<double> true_value;
};

// Largest set of events whose predicted onset lies within grace_steps *
// step_h of the true onset and whose predicted order agrees with the true
// order for every pair in the set.
std::vector<EventMatch> match_events(std::span<const std::optional<double>> pred,
                                     std::span<const std::optional<double>> truth,
                                     double grace_steps = 3.0, double step_h = 0.5);

// matched / number of events (0 for an empty chain).
double pathway_accuracy(std::span<const std::optional<double>> pred,
                        std::span<const std::optional<double>> truth, double grace_steps = 3.0,
                        double step_h = 0.5);

// Mean |pred - true| onset over matched events; nullopt when none matched.
std::optional<double> trigger_time_deviation(std::span<const EventMatch> matches);

// |pred - true| / (hi - lo); ValidationError unless hi > lo.
double normalized_event_error(double pred, double truth, double lo, double hi);

// A chain qualifies when its true onsets, in chain order, are sorted up to at
// most one adjacent transposition. Chains with a missing onset never qualify.
bool chain_qualifies(std::span<const std::optional<double>> true_onsets);

using RangeTable = std::map<std::string, std::pair<double, double>>;  // qualified -> (lo, hi)
// File layout: {"ranges": {"System.Indicator": [lo, hi], ...}}
RangeTable load_ranges(const std::string& path);

struct PathwayResult {
  std::string pathway;
  std::vector<EventMatch> matches;
  double accuracy = 0.0;
  std::optional<double> delta_t_h;
  std::optional<double> normalized_error;  // mean over matched events with a range
  bool qualifies = false;
};

PathwayResult evaluate_pathway(const IndicatorGrid& predicted, const IndicatorGrid& truth,
                               const PathwayDefinition& pathway, const RangeTable& ranges = {},
                               double grace_steps = 3.0);

}  // namespace organsim

#include "organsim/pathway.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "organsim/errors.hpp"

namespace organsim {

using nlohmann::json;

std::string_view direction_name(EventDirection d) {
  switch (d) {
    case EventDirection::RiseAbove: return "rise_above";
    case EventDirection::FallBelow: return "fall_below";
    case EventDirection::SecondFall: return "second_fall";
  }
  return "rise_above";
}

EventDirection parse_direction(std::string_view s) {
  for (auto d : {EventDirection::RiseAbove, EventDirection::FallBelow, EventDirection::SecondFall}) {
    if (direction_name(d) == s) return d;
  }
  throw ValidationError("unknown event direction '" + std::string(s) + "'");
}

void PathwayDefinition::validate() const {
  if (name.empty()) throw ValidationError("pathway without a name");
  if (events.size() < 3) throw ValidationError("pathway '" + name + "' needs at least 3 events");
  for (const auto& e : events) {
    if (!SystemTable::canonical().find_qualified(e.indicator)) {
      throw ValidationError("pathway '" + name + "': unknown indicator '" + e.indicator + "'");
    }
    if (e.threshold && !std::isfinite(*e.threshold)) {
      throw ValidationError("pathway '" + name + "': non-finite threshold");
    }
  }
}

bool PathwayDefinition::thresholds_configured() const {
  return std::all_of(events.begin(), events.end(), [](const auto& e) { return e.threshold.has_value(); });
}

json PathwayDefinition::to_json() const {
  json ev = json::array();
  for (const auto& e : events) {
    ev.push_back({{"indicator", e.indicator},
                  {"direction", std::string(direction_name(e.direction))},
                  {"threshold", e.threshold ? json(*e.threshold) : json(nullptr)}});
  }
  return {{"name", name}, {"events", ev}};
}

PathwayDefinition PathwayDefinition::from_json(const json& j) {
  PathwayDefinition p;
  try {
    p.name = j.at("name").get<std::string>();
    for (const auto& e : j.at("events")) {
      PathwayEvent ev;
      ev.indicator = e.at("indicator").get<std::string>();
      ev.direction = parse_direction(e.at("direction").get<std::string>());
      if (e.contains("threshold") && e.at("threshold").is_number()) {
        ev.threshold = e.at("threshold").get<double>();
      }
      p.events.push_back(std::move(ev));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("pathway: ") + e.what());
  }
  p.validate();
  return p;
}

std::vector<PathwayDefinition> load_pathways(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read pathways file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("pathways file " + path + ": " + e.what());
  }
  std::vector<PathwayDefinition> out;
  if (!j.contains("pathways")) throw ValidationError("pathways file lacks 'pathways'");
  for (const auto& p : j.at("pathways")) out.push_back(PathwayDefinition::from_json(p));
  return out;
}

std::vector<std::optional<double>> detect_events(const IndicatorGrid& grid,
                                                 const PathwayDefinition& pathway) {
  pathway.validate();
  if (!pathway.thresholds_configured()) {
    throw ValidationError("pathway '" + pathway.name + "' has operator-supplied thresholds left unset");
  }
  std::vector<std::optional<double>> out;
  for (const auto& e : pathway.events) {
    const auto* info = SystemTable::canonical().find_qualified(e.indicator);
    const auto* ser = grid.find(info->name);
    std::optional<double> onset;
    if (ser && ser->available) {
      const double thr = *e.threshold;
      bool fell = false, recovered = false;
      for (std::size_t i = 0; i < grid.length && !onset; ++i) {
        const double v = ser->values[i];
        if (!std::isfinite(v)) continue;
        switch (e.direction) {
          case EventDirection::RiseAbove:
            if (v > thr) onset = grid.time_at(i);
            break;
          case EventDirection::FallBelow:
            if (v < thr) onset = grid.time_at(i);
            break;
          case EventDirection::SecondFall:
            if (v < thr) {
              if (fell && recovered) onset = grid.time_at(i);
              fell = true;
            } else if (fell) {
              recovered = true;
            }
            break;
        }
      }
    }
    out.push_back(onset);
  }
  return out;
}

std::vector<EventMatch> match_events(std::span<const std::optional<double>> pred,
                                     std::span<const std::optional<double>> truth,
                                     double grace_steps, double step_h) {
  if (pred.size() != truth.size()) throw ValidationError("match_events: chain length mismatch");
  const std::size_t n = truth.size();
  std::vector<EventMatch> out(n);
  const double tol = grace_steps * step_h + 1e-9;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < n; ++i) {
    out[i].event = i;
    out[i].predicted_onset_h = pred[i];
    out[i].true_onset_h = truth[i];
    if (pred[i] && truth[i] && std::fabs(*pred[i] - *truth[i]) <= tol) eligible.push_back(i);
  }
  // Longest chain non-decreasing in both true and predicted onset.
  std::sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
    if (*truth[a] != *truth[b]) return *truth[a] < *truth[b];
    if (*pred[a] != *pred[b]) return *pred[a] < *pred[b];
    return a < b;
  });
  const std::size_t m = eligible.size();
  std::vector<std::size_t> len(m, 1), prev(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < j; ++i) {
      if (*pred[eligible[i]] <= *pred[eligible[j]] && len[i] + 1 > len[j]) {
        len[j] = len[i] + 1;
        prev[j] = i;
      }
    }
  }
  if (m > 0) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j) {
      if (len[j] > len[best]) best = j;
    }
    for (std::size_t j = best; j != m; j = prev[j]) out[eligible[j]].matched = true;
  }
  return out;
}

double pathway_accuracy(std::span<const std::optional<double>> pred,
                        std::span<const std::optional<double>> truth, double grace_steps,
                        double step_h) {
  if (truth.empty()) return 0.0;
  const auto m = match_events(pred, truth, grace_steps, step_h);
  const auto k = std::count_if(m.begin(), m.end(), [](const auto& e) { return e.matched; });
  return static_cast<double>(k) / static_cast<double>(truth.size());
}

std::optional<double> trigger_time_deviation(std::span<const EventMatch> matches) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& m : matches) {
    if (!m.matched || !m.predicted_onset_h || !m.true_onset_h) continue;
    s += std::fabs(*m.predicted_onset_h - *m.true_onset_h);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

double normalized_event_error(double pred, double truth, double lo, double hi) {
  if (!(hi > lo)) throw ValidationError("normalized_event_error: range must satisfy hi > lo");
  return std::fabs(pred - truth) / (hi - lo);
}

bool chain_qualifies(std::span<const std::optional<double>> true_onsets) {
  std::size_t inversions = 0;
  for (std::size_t i = 0; i < true_onsets.size(); ++i) {
    if (!true_onsets[i]) return false;
    for (std::size_t j = i + 1; j < true_onsets.size(); ++j) {
      if (true_onsets[j] && *true_onsets[j] < *true_onsets[i]) ++inversions;
    }
  }
  return inversions <= 1;
}

RangeTable load_ranges(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read range table " + path);
  RangeTable t;
  try {
    const auto j = json::parse(in);
    for (const auto& [k, v] : j.at("ranges").items()) {
      if (!SystemTable::canonical().find_qualified(k)) {
        throw ValidationError("range table: unknown indicator '" + k + "'");
      }
      const double lo = v.at(0).get<double>(), hi = v.at(1).get<double>();
      if (!(hi > lo)) throw ValidationError("range table: '" + k + "' needs hi > lo");
      t[k] = {lo, hi};
    }
  } catch (const json::exception& e) {
    throw ValidationError("range table " + path + ": " + e.what());
  }
  return t;
}

PathwayResult evaluate_pathway(const IndicatorGrid& predicted, const IndicatorGrid& truth,
                               const PathwayDefinition& pathway, const RangeTable& ranges,
                               double grace_steps) {
  PathwayResult r;
  r.pathway = pathway.name;
  const auto p = detect_events(predicted, pathway);
  const auto t = detect_events(truth, pathway);
  r.matches = match_events(p, t, grace_steps, truth.step_h);
  r.accuracy = pathway_accuracy(p, t, grace_steps, truth.step_h);
  r.delta_t_h = trigger_time_deviation(r.matches);
  r.qualifies = chain_qualifies(t);

  const auto value_at = [](const IndicatorGrid& g, const std::string& bare,
                           double time_h) -> std::optional<double> {
    const auto* s = g.find(bare);
    if (!s) return std::nullopt;
    const auto idx = static_cast<std::size_t>(std::llround((time_h - g.start_h) / g.step_h));
    if (idx >= g.length) return std::nullopt;
    return s->values[idx];
  };
  double err = 0.0;
  std::size_t n = 0;
  for (auto& m : r.matches) {
    const auto& ev = pathway.events[m.event];
    const auto* info = SystemTable::canonical().find_qualified(ev.indicator);
    if (m.predicted_onset_h) m.predicted_value = value_at(predicted, info->name, *m.predicted_onset_h);
    if (m.true_onset_h) m.true_value = value_at(truth, info->name, *m.true_onset_h);
    const auto range = ranges.find(ev.indicator);
    if (m.matched && range != ranges.end() && m.predicted_value && m.true_value) {
      err += normalized_event_error(*m.predicted_value, *m.true_value, range->second.first,
                                    range->second.second);
      ++n;
    }
  }
  if (n) r.normalized_error = err / static_cast<double>(n);
  return r;
}

}  // namespace organsim

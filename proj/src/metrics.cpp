#include "organsim/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "organsim/errors.hpp"

namespace organsim {

using nlohmann::json;

namespace {

void check_alignment(const SimulationRun& run, const IndicatorGrid& truth) {
  if (run.start_index + run.horizon > truth.length) {
    throw ValidationError("horizon mismatch: run covers grid cells up to " +
                          std::to_string(run.start_index + run.horizon) + " but the grid has " +
                          std::to_string(truth.length));
  }
  for (const auto& s : run.steps) {
    if (s.grid_index != run.start_index + s.t_index || s.t_index >= run.horizon) {
      throw ValidationError("horizon mismatch: step " + std::to_string(s.t_index) +
                            " is not aligned with the run's window");
    }
  }
}

std::string bare_name(const std::string& qualified, System s) {
  const auto prefix = std::string(system_name(s)) + ".";
  return qualified.rfind(prefix, 0) == 0 ? qualified.substr(prefix.size()) : qualified;
}

}  // namespace

MetricReport mse_report(const SimulationRun& run, const IndicatorGrid& truth) {
  check_alignment(run, truth);
  MetricReport r;
  r.run_id = run.run_id;
  r.patient_id = run.patient_id;

  std::map<std::string, std::pair<double, std::size_t>> acc;
  std::map<std::string, System> owner;
  std::vector<std::pair<double, std::size_t>> step_acc(run.horizon, {0.0, 0});
  std::map<System, std::vector<std::pair<double, std::size_t>>> sys_step_acc;

  // Canonical order so the sums do not depend on how steps were stored.
  std::vector<const SimulationStep*> order;
  for (const auto& s : run.steps) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return std::pair(a->t_index, a->system) < std::pair(b->t_index, b->system);
  });
  for (const auto* sp : order) {
    const auto& s = *sp;
    if (s.skipped) continue;
    auto& ss = sys_step_acc[s.system];
    ss.resize(run.horizon, {0.0, 0});
    for (std::size_t n = 0; n < s.indicators.size(); ++n) {
      const auto* ser = truth.find(bare_name(s.indicators[n], s.system));
      if (!ser || !ser->available) continue;
      const double y = ser->values[s.grid_index];
      const double p = s.final_values[n];
      if (!std::isfinite(y) || !std::isfinite(p)) continue;
      const double e = (p - y) * (p - y);
      auto& a = acc[s.indicators[n]];
      a.first += e;
      a.second += 1;
      owner[s.indicators[n]] = s.system;
      step_acc[s.t_index].first += e;
      step_acc[s.t_index].second += 1;
      ss[s.t_index].first += e;
      ss[s.t_index].second += 1;
      ++r.scored;
    }
  }

  std::map<System, std::vector<double>> by_system;
  double total = 0.0;
  for (const auto& [name, a] : acc) {
    const double m = a.first / static_cast<double>(a.second);
    r.per_indicator.push_back({name, owner[name], m, a.second});
    by_system[owner[name]].push_back(m);
    total += m;
  }
  r.pse = acc.empty() ? 0.0 : total / static_cast<double>(acc.size());
  for (auto sys : kAllSystems) {
    const auto it = by_system.find(sys);
    if (it == by_system.end()) continue;
    const auto& v = it->second;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    r.per_system.push_back({sys, mean, std::sqrt(var / static_cast<double>(v.size())), v.size()});
  }
  for (const auto& [e, n] : step_acc) {
    r.per_step.push_back(n ? e / static_cast<double>(n) : std::nan(""));
  }
  for (const auto& [sys, v] : sys_step_acc) {
    auto& out = r.per_step_system[sys];
    for (const auto& [e, n] : v) out.push_back(n ? e / static_cast<double>(n) : std::nan(""));
  }
  r.scr = run_scr(run);
  return r;
}

double run_scr(const SimulationRun& run) {
  std::size_t total = 0, ok = 0;
  for (const auto& s : run.steps) {
    for (const char* role : {"simulator_s1", "simulator_s2"}) {
      const auto it = s.outputs.find(role);
      if (it == s.outputs.end()) continue;
      ++total;
      if (validate_output(it->second, OutputKind::Simulation, s.indicators).empty()) ++ok;
    }
  }
  return total ? static_cast<double>(ok) / static_cast<double>(total) : 1.0;
}

IndicatorGrid predicted_grid(const SimulationRun& run, const IndicatorGrid& truth) {
  check_alignment(run, truth);
  IndicatorGrid g = truth;
  for (const auto& s : run.steps) {
    if (s.skipped) continue;
    for (std::size_t n = 0; n < s.indicators.size(); ++n) {
      auto* ser = g.find(bare_name(s.indicators[n], s.system));
      if (ser && std::isfinite(s.final_values[n])) ser->values[s.grid_index] = s.final_values[n];
    }
  }
  return g;
}

json MetricReport::to_json() const {
  const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json ind = json::array();
  for (const auto& x : per_indicator) {
    ind.push_back({{"indicator", x.indicator}, {"mse", x.mse}, {"n", x.n}});
  }
  json sys = json::array();
  for (const auto& x : per_system) {
    sys.push_back({{"system", std::string(system_name(x.system))},
                   {"mean", x.mean},
                   {"sd", x.sd},
                   {"indicators", x.indicators}});
  }
  json steps = json::array();
  for (double v : per_step) steps.push_back(num(v));
  json heat = json::object();
  for (const auto& [s, v] : per_step_system) {
    json a = json::array();
    for (double x : v) a.push_back(num(x));
    heat[std::string(system_name(s))] = a;
  }
  return {{"run_id", run_id},         {"patient_id", patient_id}, {"per_indicator", ind},
          {"per_system", sys},        {"per_step", steps},        {"per_step_system", heat},
          {"pse", pse},               {"scored", scored},
          {"scr", scr ? json(*scr) : json(nullptr)}};
}

}  // namespace organsim

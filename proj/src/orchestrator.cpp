#include "organsim/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "organsim/errors.hpp"
#include "organsim/hashing.hpp"
#include "organsim/kernels.hpp"

namespace organsim {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void strict_keys(const json& j, std::initializer_list<std::string_view> keys, std::string_view where) {
  if (!j.is_object()) throw ValidationError(std::string(where) + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ValidationError(std::string(where) + ": unknown key '" + k + "'");
    }
  }
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json num_array(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

std::vector<double> num_vector(const json& a) {
  std::vector<double> out;
  for (const auto& x : a) out.push_back(x.is_null() ? kNaN : x.get<double>());
  return out;
}

json row_json(const SummaryRow& r) {
  json ev = json::array();
  for (const auto& e : r.events) {
    ev.push_back({{"indicator", e.indicator},
                  {"type", std::string(trend_token(e.type))},
                  {"value", num(e.value)}});
  }
  return {{"time_h", r.time_h}, {"label", r.time_label}, {"events", ev}};
}

SummaryRow row_from_json(const json& j) {
  SummaryRow r;
  r.time_h = j.at("time_h").get<double>();
  r.time_label = j.at("label").get<std::string>();
  for (const auto& e : j.at("events")) {
    SymbolicEvent ev;
    ev.time_h = r.time_h;
    ev.indicator = e.at("indicator").get<std::string>();
    const auto t = parse_trend_token(e.at("type").get<std::string>());
    if (!t) throw ValidationError("bad event type in stored row");
    ev.type = *t;
    ev.value = e.at("value").is_null() ? kNaN : e.at("value").get<double>();
    r.events.push_back(std::move(ev));
  }
  return r;
}

std::uint64_t action_seed(std::uint64_t seed, std::size_t grid_index, System s) {
  return mix_seed(mix_seed(seed, grid_index), static_cast<std::uint64_t>(s) + 1);
}

// Per-system view of the grid.
struct SystemView {
  System system;
  std::vector<std::size_t> series;  // indices into grid.series (available only)
};

struct RunState {
  const PatientRecord* record = nullptr;
  const IndicatorGrid* grid = nullptr;
  const OrchestratorConfig* cfg = nullptr;
  std::vector<std::vector<double>> buffer;  // per grid series, advancing values
  std::array<std::vector<SummaryRow>, kSystemCount> logs;
  std::vector<ResidualHistory> histories;
  std::map<System, double> baselines;
  double gain = 1.0;
  std::string base_text;
  std::shared_ptr<const AgentBackend> simulator, analyzer, correlator, compensator;
  std::shared_ptr<const PolicyParams> policy;
  std::vector<SystemView> views;            // simulated systems
  std::vector<SystemView> candidate_views;  // every system of the grid
};

SystemWindowBlock window_block(const RunState& st, const SystemView& v, std::size_t i) {
  const auto& g = *st.grid;
  const std::size_t w = st.cfg->window.w;
  SystemWindowBlock b;
  b.system = v.system;
  b.start_h = g.time_at(i - w);
  b.end_h = g.time_at(i - 1);
  for (auto idx : v.series) {
    const auto& buf = st.buffer[idx];
    b.series.push_back({g.series[idx].indicator,
                        std::vector<double>(buf.begin() + static_cast<std::ptrdiff_t>(i - w),
                                            buf.begin() + static_cast<std::ptrdiff_t>(i))});
  }
  return b;
}

std::vector<SummaryRow> recent_rows(const std::vector<SummaryRow>& log, std::size_t n) {
  const std::size_t from = log.size() > n ? log.size() - n : 0;
  return {log.begin() + static_cast<std::ptrdiff_t>(from), log.end()};
}

std::vector<double> values_of(const ParsedSimulation& sim, const std::vector<std::string>& names,
                              std::vector<double>* conf) {
  std::vector<double> out;
  for (const auto& n : names) {
    const auto* e = sim.find(n);
    out.push_back(e->value);
    if (conf) conf->push_back(e->confidence);
  }
  return out;
}

double scored_mse(const std::vector<double>& pred, const std::vector<double>& truth) {
  std::vector<double> p, t;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (std::isfinite(truth[k])) p.push_back(pred[k]), t.push_back(truth[k]);
  }
  return kernels::mse(p, t);
}

struct StepOutput {
  SimulationStep step;
  std::optional<Transition> transition;
};

StepOutput step_system(const RunState& st, const SystemView& view, std::size_t k, std::size_t i) {
  const auto& cfg = *st.cfg;
  const auto& g = *st.grid;
  StepOutput out;
  auto& s = out.step;
  s.t_index = k;
  s.grid_index = i;
  s.time_h = g.time_at(i);
  s.system = view.system;
  if (view.series.empty()) {
    s.skipped = true;
    s.valid = false;
    return out;
  }

  const auto win = window_block(st, view, i);
  for (auto idx : view.series) {
    s.indicators.push_back(qualified_name(view.system, g.series[idx].indicator));
    s.truth.push_back(g.series[idx].values[i]);
  }
  const std::vector<double> last_values = [&] {
    std::vector<double> v;
    for (const auto& ser : win.series) v.push_back(ser.values.back());
    return v;
  }();

  const auto treat = treatment_block(treatments_between(st.record->treatments, win.start_h, s.time_h));
  const bool show_treat = cfg.toggles.treatment && !treat.courses.empty();
  const bool show_base = cfg.toggles.baseinfo;

  // 1. Analyzer
  const auto& own_log = st.logs[static_cast<std::size_t>(view.system)];
  {
    StructuredPrompt p{PromptKind::Analyzer, {win}, cfg.compensator_cfg.gate_threshold};
    if (cfg.toggles.summary) p.blocks.emplace_back(SummaryBlock{recent_rows(own_log, cfg.summary_rows)});
    const auto text = render_prompt(p);
    s.prompts["analyzer"] = text;
    try {
      const auto reply = st.analyzer->generate(text);
      s.outputs["analyzer"] = reply;
      auto rows = parse_summary_rows(reply);
      if (!rows.rows.empty() && !rows.rows.back().events.empty()) s.summary_row = rows.rows.back();
    } catch (const Error& e) {
      s.violations.push_back(std::string("analyzer: ") + e.what());
    }
  }

  // 2. Correlator state
  CorrelatorState cs;
  cs.system = view.system;
  cs.window = win;
  cs.treatments = treatments_between(st.record->treatments, win.start_h, s.time_h);
  cs.current_time_h = win.end_h;
  for (std::size_t sys = 0; sys < kSystemCount; ++sys) {
    for (const auto& r : recent_rows(st.logs[sys], cfg.summary_rows)) {
      cs.summary_events.insert(cs.summary_events.end(), r.events.begin(), r.events.end());
    }
  }
  if (s.summary_row) {
    cs.summary_events.insert(cs.summary_events.end(), s.summary_row->events.begin(),
                             s.summary_row->events.end());
  }
  for (const auto& v : st.candidate_views) {
    if (v.system == view.system) continue;
    for (auto idx : v.series) {
      cs.candidates.push_back(qualified_name(v.system, g.series[idx].indicator));
      const auto& buf = st.buffer[idx];
      cs.candidate_values.emplace_back(buf.begin() + static_cast<std::ptrdiff_t>(i - cfg.window.w),
                                       buf.begin() + static_cast<std::ptrdiff_t>(i));
    }
  }
  s.candidates = cs.candidates;
  s.action.assign(cs.candidates.size(), false);
  s.candidate_probs.assign(cs.candidates.size(), 0.0);

  if (!cs.candidates.empty()) {
    StructuredPrompt p{PromptKind::Correlator, {win}, cfg.compensator_cfg.gate_threshold};
    if (cfg.toggles.summary) {
      auto rows = recent_rows(own_log, cfg.summary_rows);
      if (s.summary_row) rows.push_back(*s.summary_row);
      p.blocks.emplace_back(SummaryBlock{std::move(rows)});
    }
    if (show_treat) p.blocks.emplace_back(treat);
    p.blocks.emplace_back(CandidateBlock{cs.candidates});
    s.prompts["correlator"] = render_prompt(p);

    // 3. Action
    FeatureMatrix features;
    switch (cfg.mechanism) {
      case ReferenceMechanism::None:
        break;
      case ReferenceMechanism::Rl: {
        features = encode_state(cs);
        const auto z = st.policy->logits(view.system, cs.candidates, features);
        ReferenceAction a;
        if (cfg.greedy) {
          a = greedy_action(z);
        } else {
          SplitMixRng rng(action_seed(cfg.seed, i, view.system));
          a = sample_action(z, rng);
        }
        s.action = a.mask;
        s.candidate_probs = a.probs;
        s.log_prob_old = a.log_prob_old;
        break;
      }
      case ReferenceMechanism::RuleBased: {
        const auto it = cfg.rule_references.find(view.system);
        if (it != cfg.rule_references.end()) {
          for (std::size_t c = 0; c < cs.candidates.size(); ++c) {
            const bool on = std::find(it->second.begin(), it->second.end(), cs.candidates[c]) !=
                            it->second.end();
            s.action[c] = on;
            s.candidate_probs[c] = on ? 1.0 : 0.0;
          }
        }
        break;
      }
      case ReferenceMechanism::Backend: {
        try {
          const auto reply = st.correlator->generate(s.prompts["correlator"]);
          s.outputs["correlator"] = reply;
          const auto parsed = parse_reference_block(reply, view.system);
          for (const auto& v : parsed.violations) {
            s.violations.push_back("correlator: " + v.message);
          }
          for (const auto& e : parsed.entries) {
            const auto it = std::find(cs.candidates.begin(), cs.candidates.end(), e.indicator);
            if (it == cs.candidates.end()) {
              s.violations.push_back("correlator: '" + e.indicator + "' is not a candidate");
              continue;
            }
            const auto c = static_cast<std::size_t>(it - cs.candidates.begin());
            s.action[c] = true;
            s.candidate_probs[c] = 1.0;
          }
        } catch (const Error& e) {
          s.violations.push_back(std::string("correlator: ") + e.what());
        }
        break;
      }
    }
    if (cfg.mechanism == ReferenceMechanism::Rl) {
      Transition tr;
      tr.patient_id = st.record->patient_id;
      tr.t_index = k;
      tr.system = view.system;
      tr.candidates = cs.candidates;
      tr.features = std::move(features);
      tr.mask = s.action;
      tr.log_prob_old = s.log_prob_old;
      out.transition = std::move(tr);
    }
  }

  ReferenceBlock refs;
  for (std::size_t c = 0; c < cs.candidates.size(); ++c) {
    if (!s.action[c]) continue;
    s.references.push_back(cs.candidates[c]);
    refs.entries.push_back({cs.candidates[c], cs.candidate_values[c]});
  }

  // 4. Simulator, stage 1 (no references) and stage 2 (with references)
  const auto sim_prompt = [&](bool with_refs) {
    StructuredPrompt p{with_refs ? PromptKind::SimulatorStage2 : PromptKind::SimulatorStage1, {},
                       cfg.compensator_cfg.gate_threshold};
    if (show_base) p.blocks.emplace_back(BaseInfoBlock{st.base_text});
    p.blocks.emplace_back(win);
    if (show_treat) p.blocks.emplace_back(treat);
    if (with_refs) p.blocks.emplace_back(refs);
    return render_prompt(p);
  };
  const auto simulate = [&](const std::string& prompt, const char* role) {
    const auto reply = st.simulator->generate(prompt);
    s.outputs[role] = reply;
    return parse_simulation_block(reply, s.indicators);
  };
  try {
    const auto s2_prompt = sim_prompt(true);
    s.prompts["simulator_s2"] = s2_prompt;
    const auto s2 = simulate(s2_prompt, "simulator_s2");
    s.referenced_values = values_of(s2, s.indicators, &s.confidences);
    const auto s1_prompt = sim_prompt(false);
    if (s1_prompt == s2_prompt) {
      s.baseline_values = s.referenced_values;
      s.baseline_confidences = s.confidences;
    } else {
      s.prompts["simulator_s1"] = s1_prompt;
      const auto s1 = simulate(s1_prompt, "simulator_s1");
      s.baseline_values = values_of(s1, s.indicators, &s.baseline_confidences);
    }
  } catch (const Error& e) {
    s.valid = false;
    s.violations.push_back(std::string("simulator: ") + e.what());
    s.final_values = last_values;
    s.residuals.assign(s.indicators.size(), std::nullopt);
    s.gated.assign(s.indicators.size(), false);
    return out;
  }

  // 5. Reward (teacher-forced truth from the grid)
  const auto b_it = st.baselines.find(view.system);
  const double baseline = b_it == st.baselines.end() ? 0.0 : b_it->second;
  s.reward = RewardRecord::make(scored_mse(s.baseline_values, s.truth),
                                scored_mse(s.referenced_values, s.truth), baseline);
  s.reward_valid = true;
  if (out.transition) out.transition->reward = s.reward;

  // 6. Gate and compensation
  s.gated = gate(s.confidences, cfg.compensator_cfg.gate_threshold);
  s.residuals.assign(s.indicators.size(), std::nullopt);
  const auto& hist = st.histories[static_cast<std::size_t>(view.system)];
  if (std::find(s.gated.begin(), s.gated.end(), true) != s.gated.end()) {
    StructuredPrompt p{PromptKind::Compensator, {win}, cfg.compensator_cfg.gate_threshold};
    SimulationBlock sim;
    for (std::size_t n = 0; n < s.indicators.size(); ++n) {
      sim.entries.push_back({s.indicators[n], s.referenced_values[n], s.confidences[n]});
    }
    p.blocks.emplace_back(std::move(sim));
    if (cfg.toggles.residual_history) p.blocks.emplace_back(hist.block(s.indicators));
    s.prompts["compensator"] = render_prompt(p);
    if (cfg.compensator_cfg.estimator == CompensatorConfig::Estimator::HistoryMean) {
      s.residuals = estimate_from_history(s.indicators, s.gated, hist, st.gain);
    } else {
      try {
        const auto reply = st.compensator->generate(s.prompts["compensator"]);
        s.outputs["compensator"] = reply;
        std::optional<Violation> v;
        s.residuals = estimate_from_text(reply, s.indicators, s.gated, &v);
        if (v) s.violations.push_back("compensator: " + v->message);
      } catch (const Error& e) {
        s.violations.push_back(std::string("compensator: ") + e.what());
      }
    }
  }
  s.final_values = apply_compensation(s.referenced_values, s.residuals);
  return out;
}

}  // namespace

std::string_view run_mode_name(RunMode m) {
  return m == RunMode::FreeRunning ? "free_running" : "teacher_forced";
}

RunMode parse_run_mode(std::string_view s) {
  if (s == "teacher_forced") return RunMode::TeacherForced;
  if (s == "free_running") return RunMode::FreeRunning;
  throw ValidationError("unknown mode '" + std::string(s) + "'");
}

std::string_view mechanism_name(ReferenceMechanism m) {
  switch (m) {
    case ReferenceMechanism::Rl: return "rl";
    case ReferenceMechanism::RuleBased: return "rule_based";
    case ReferenceMechanism::None: return "none";
    case ReferenceMechanism::Backend: return "backend";
  }
  return "none";
}

ReferenceMechanism parse_mechanism(std::string_view s) {
  for (auto m : {ReferenceMechanism::Rl, ReferenceMechanism::RuleBased, ReferenceMechanism::None,
                 ReferenceMechanism::Backend}) {
    if (mechanism_name(m) == s) return m;
  }
  throw ValidationError("unknown reference mechanism '" + std::string(s) + "'");
}

void OrchestratorConfig::validate() const {
  if (!(preprocess.step_h > 0.0)) throw ValidationError("step_h must be positive");
  if (!(preprocess.tau_steps > 0.0)) throw ValidationError("tau_steps must be positive");
  if (window.w < 2) throw ValidationError("window w must be at least 2");
  if (window.s < 1) throw ValidationError("window s must be at least 1");
  if (horizon == 0) throw ValidationError("horizon must be positive");
  if (systems.empty()) throw ValidationError("at least one system is required");
  ppo.validate();
  compensator_cfg.validate();
  const auto& table = SystemTable::canonical();
  for (const auto& [sys, names] : rule_references) {
    for (const auto& n : names) {
      const auto* info = table.find_qualified(n);
      if (!info) throw ValidationError("rule_references: unknown indicator '" + n + "'");
      if (info->system == sys) {
        throw ValidationError("rule_references: '" + n + "' belongs to the target system");
      }
    }
  }
}

json OrchestratorConfig::to_json() const {
  json sys = json::array();
  for (auto s : systems) sys.push_back(std::string(system_name(s)));
  json rules = json::object();
  for (const auto& [s, v] : rule_references) rules[std::string(system_name(s))] = v;
  return {
      {"preprocess", {{"step_h", preprocess.step_h}, {"tau_steps", preprocess.tau_steps}}},
      {"window", {{"w", window.w}, {"s", window.s}}},
      {"horizon", horizon},
      {"start_index", start_index ? json(*start_index) : json(nullptr)},
      {"mode", std::string(run_mode_name(mode))},
      {"systems", sys},
      {"simulator", simulator.to_json()},
      {"analyzer", analyzer.to_json()},
      {"correlator", correlator.to_json()},
      {"compensator", compensator.to_json()},
      {"mechanism", std::string(mechanism_name(mechanism))},
      {"greedy", greedy},
      {"policy_path", policy_path ? json(*policy_path) : json(nullptr)},
      {"rule_references", rules},
      {"ppo",
       {{"epsilon_clip", ppo.epsilon_clip},
        {"alpha_ema", ppo.alpha_ema},
        {"beta_sparsity", ppo.beta_sparsity},
        {"beta_entropy", ppo.beta_entropy},
        {"learning_rate", ppo.learning_rate},
        {"batch_size", ppo.batch_size},
        {"epochs", ppo.epochs}}},
      {"compensation",
       {{"gate_threshold", compensator_cfg.gate_threshold},
        {"history_depth", compensator_cfg.history_depth},
        {"estimator", compensator_cfg.estimator == CompensatorConfig::Estimator::Backend
                          ? "backend"
                          : "history_mean"},
        {"gain", compensator_cfg.gain},
        {"train", compensator_cfg.train},
        {"learning_rate", compensator_cfg.learning_rate}}},
      {"summary_rows", summary_rows},
      {"toggles",
       {{"baseinfo", toggles.baseinfo},
        {"treatment", toggles.treatment},
        {"summary", toggles.summary},
        {"residual_history", toggles.residual_history}}},
      {"seed", seed},
      {"parallel_systems", parallel_systems}};
}

OrchestratorConfig OrchestratorConfig::from_json(const json& j) {
  strict_keys(j,
              {"preprocess", "window", "horizon", "start_index", "mode", "systems", "simulator",
               "analyzer", "correlator", "compensator", "mechanism", "greedy", "policy_path",
               "rule_references", "ppo", "compensation", "summary_rows", "toggles", "seed",
               "parallel_systems"},
              "config");
  OrchestratorConfig c;
  const auto& table = SystemTable::canonical();
  try {
    if (j.contains("preprocess")) {
      const auto& p = j.at("preprocess");
      strict_keys(p, {"step_h", "tau_steps"}, "config.preprocess");
      c.preprocess.step_h = p.value("step_h", c.preprocess.step_h);
      c.preprocess.tau_steps = p.value("tau_steps", c.preprocess.tau_steps);
    }
    if (j.contains("window")) {
      const auto& w = j.at("window");
      strict_keys(w, {"w", "s"}, "config.window");
      c.window.w = w.value("w", c.window.w);
      c.window.s = w.value("s", c.window.s);
    }
    c.horizon = j.value("horizon", c.horizon);
    if (j.contains("start_index") && !j.at("start_index").is_null()) {
      c.start_index = j.at("start_index").get<std::size_t>();
    }
    if (j.contains("mode")) c.mode = parse_run_mode(j.at("mode").get<std::string>());
    if (j.contains("systems")) {
      c.systems.clear();
      for (const auto& s : j.at("systems")) {
        const auto sys = table.parse_system(s.get<std::string>());
        if (!sys) throw ValidationError("config.systems: unknown system '" + s.get<std::string>() + "'");
        c.systems.push_back(*sys);
      }
    }
    if (j.contains("simulator")) c.simulator = BackendDescriptor::from_json(j.at("simulator"));
    if (j.contains("analyzer")) c.analyzer = BackendDescriptor::from_json(j.at("analyzer"));
    if (j.contains("correlator")) c.correlator = BackendDescriptor::from_json(j.at("correlator"));
    if (j.contains("compensator")) c.compensator = BackendDescriptor::from_json(j.at("compensator"));
    if (j.contains("mechanism")) c.mechanism = parse_mechanism(j.at("mechanism").get<std::string>());
    c.greedy = j.value("greedy", c.greedy);
    if (j.contains("policy_path") && !j.at("policy_path").is_null()) {
      c.policy_path = j.at("policy_path").get<std::string>();
    }
    if (j.contains("rule_references")) {
      for (const auto& [name, arr] : j.at("rule_references").items()) {
        const auto sys = table.parse_system(name);
        if (!sys) throw ValidationError("config.rule_references: unknown system '" + name + "'");
        c.rule_references[*sys] = arr.get<std::vector<std::string>>();
      }
    }
    if (j.contains("ppo")) {
      const auto& p = j.at("ppo");
      strict_keys(p,
                  {"epsilon_clip", "alpha_ema", "beta_sparsity", "beta_entropy", "learning_rate",
                   "batch_size", "epochs"},
                  "config.ppo");
      c.ppo.epsilon_clip = p.value("epsilon_clip", c.ppo.epsilon_clip);
      c.ppo.alpha_ema = p.value("alpha_ema", c.ppo.alpha_ema);
      c.ppo.beta_sparsity = p.value("beta_sparsity", c.ppo.beta_sparsity);
      c.ppo.beta_entropy = p.value("beta_entropy", c.ppo.beta_entropy);
      c.ppo.learning_rate = p.value("learning_rate", c.ppo.learning_rate);
      c.ppo.batch_size = p.value("batch_size", c.ppo.batch_size);
      c.ppo.epochs = p.value("epochs", c.ppo.epochs);
    }
    if (j.contains("compensation")) {
      const auto& p = j.at("compensation");
      strict_keys(p, {"gate_threshold", "history_depth", "estimator", "gain", "train", "learning_rate"},
                  "config.compensation");
      c.compensator_cfg.gate_threshold = p.value("gate_threshold", c.compensator_cfg.gate_threshold);
      c.compensator_cfg.history_depth = p.value("history_depth", c.compensator_cfg.history_depth);
      const auto est = p.value("estimator", std::string("history_mean"));
      if (est == "history_mean") {
        c.compensator_cfg.estimator = CompensatorConfig::Estimator::HistoryMean;
      } else if (est == "backend") {
        c.compensator_cfg.estimator = CompensatorConfig::Estimator::Backend;
      } else {
        throw ValidationError("config.compensation.estimator: unknown value '" + est + "'");
      }
      c.compensator_cfg.gain = p.value("gain", c.compensator_cfg.gain);
      c.compensator_cfg.train = p.value("train", c.compensator_cfg.train);
      c.compensator_cfg.learning_rate = p.value("learning_rate", c.compensator_cfg.learning_rate);
    }
    c.summary_rows = j.value("summary_rows", c.summary_rows);
    if (j.contains("toggles")) {
      const auto& t = j.at("toggles");
      strict_keys(t, {"baseinfo", "treatment", "summary", "residual_history"}, "config.toggles");
      c.toggles.baseinfo = t.value("baseinfo", true);
      c.toggles.treatment = t.value("treatment", true);
      c.toggles.summary = t.value("summary", true);
      c.toggles.residual_history = t.value("residual_history", true);
    }
    c.seed = j.value("seed", c.seed);
    c.parallel_systems = j.value("parallel_systems", c.parallel_systems);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string OrchestratorConfig::digest() const { return sha256_hex(to_json().dump()); }

json SimulationStep::to_json() const {
  json res = json::array();
  for (const auto& r : residuals) res.push_back(r ? num(*r) : json(nullptr));
  return {{"t_index", t_index},
          {"grid_index", grid_index},
          {"time_h", time_h},
          {"system", std::string(system_name(system))},
          {"valid", valid},
          {"skipped", skipped},
          {"reward_valid", reward_valid},
          {"violations", violations},
          {"indicators", indicators},
          {"prompts", prompts},
          {"outputs", outputs},
          {"candidates", candidates},
          {"candidate_probs", num_array(candidate_probs)},
          {"action", action},
          {"log_prob_old", num(log_prob_old)},
          {"references", references},
          {"baseline_values", num_array(baseline_values)},
          {"baseline_confidences", num_array(baseline_confidences)},
          {"referenced_values", num_array(referenced_values)},
          {"confidences", num_array(confidences)},
          {"truth", num_array(truth)},
          {"reward",
           {{"reward", reward.reward},
            {"baseline", reward.baseline},
            {"advantage", reward.advantage},
            {"mse_baseline", reward.mse_baseline},
            {"mse_referenced", reward.mse_referenced}}},
          {"gated", gated},
          {"residuals", res},
          {"final_values", num_array(final_values)},
          {"summary_row", summary_row ? row_json(*summary_row) : json(nullptr)}};
}

SimulationStep SimulationStep::from_json(const json& j) {
  SimulationStep s;
  s.t_index = j.at("t_index").get<std::size_t>();
  s.grid_index = j.at("grid_index").get<std::size_t>();
  s.time_h = j.at("time_h").get<double>();
  const auto sys = SystemTable::canonical().parse_system(j.at("system").get<std::string>());
  if (!sys) throw ValidationError("stored step: unknown system");
  s.system = *sys;
  s.valid = j.at("valid").get<bool>();
  s.skipped = j.at("skipped").get<bool>();
  s.reward_valid = j.at("reward_valid").get<bool>();
  s.violations = j.at("violations").get<std::vector<std::string>>();
  s.indicators = j.at("indicators").get<std::vector<std::string>>();
  s.prompts = j.at("prompts").get<std::map<std::string, std::string>>();
  s.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  s.candidates = j.at("candidates").get<std::vector<std::string>>();
  s.candidate_probs = num_vector(j.at("candidate_probs"));
  s.action = j.at("action").get<std::vector<bool>>();
  s.log_prob_old = j.at("log_prob_old").is_null() ? -std::numeric_limits<double>::infinity()
                                                  : j.at("log_prob_old").get<double>();
  s.references = j.at("references").get<std::vector<std::string>>();
  s.baseline_values = num_vector(j.at("baseline_values"));
  s.baseline_confidences = num_vector(j.at("baseline_confidences"));
  s.referenced_values = num_vector(j.at("referenced_values"));
  s.confidences = num_vector(j.at("confidences"));
  s.truth = num_vector(j.at("truth"));
  const auto& r = j.at("reward");
  s.reward.reward = r.at("reward").get<double>();
  s.reward.baseline = r.at("baseline").get<double>();
  s.reward.advantage = r.at("advantage").get<double>();
  s.reward.mse_baseline = r.at("mse_baseline").get<double>();
  s.reward.mse_referenced = r.at("mse_referenced").get<double>();
  s.gated = j.at("gated").get<std::vector<bool>>();
  for (const auto& x : j.at("residuals")) {
    s.residuals.push_back(x.is_null() ? std::nullopt : std::optional<double>(x.get<double>()));
  }
  s.final_values = num_vector(j.at("final_values"));
  if (!j.at("summary_row").is_null()) s.summary_row = row_from_json(j.at("summary_row"));
  return s;
}

const SimulationStep* SimulationRun::step(std::size_t t_index, System system) const {
  for (const auto& s : steps) {
    if (s.t_index == t_index && s.system == system) return &s;
  }
  return nullptr;
}

std::vector<const SimulationStep*> SimulationRun::steps_at(std::size_t t_index) const {
  std::vector<const SimulationStep*> out;
  for (const auto& s : steps) {
    if (s.t_index == t_index) out.push_back(&s);
  }
  return out;
}

json SimulationRun::to_json() const {
  json st = json::array();
  for (const auto& s : steps) st.push_back(s.to_json());
  return {{"run_id", run_id},
          {"patient_id", patient_id},
          {"mode", std::string(run_mode_name(mode))},
          {"seed", seed},
          {"config", config.to_json()},
          {"parent_run_id", parent_run_id ? json(*parent_run_id) : json(nullptr)},
          {"provenance", provenance},
          {"start_index", start_index},
          {"horizon", horizon},
          {"steps", st}};
}

SimulationRun SimulationRun::from_json(const json& j) {
  SimulationRun r;
  r.run_id = j.at("run_id").get<std::string>();
  r.patient_id = j.at("patient_id").get<std::string>();
  r.mode = parse_run_mode(j.at("mode").get<std::string>());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config = OrchestratorConfig::from_json(j.at("config"));
  if (!j.at("parent_run_id").is_null()) r.parent_run_id = j.at("parent_run_id").get<std::string>();
  r.provenance = j.at("provenance").get<std::vector<std::string>>();
  r.start_index = j.at("start_index").get<std::size_t>();
  r.horizon = j.at("horizon").get<std::size_t>();
  for (const auto& s : j.at("steps")) r.steps.push_back(SimulationStep::from_json(s));
  return r;
}

bool same_records(const SimulationRun& a, const SimulationRun& b) {
  if (a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    if (a.steps[i].to_json().dump() != b.steps[i].to_json().dump()) return false;
  }
  return true;
}

TreatmentBlock treatment_block(const std::vector<TreatmentEvent>& events) {
  TreatmentBlock b;
  for (const auto& e : events) {
    auto it = std::find_if(b.courses.begin(), b.courses.end(),
                           [&](const DrugCourse& c) { return c.drug == e.drug; });
    if (it == b.courses.end()) {
      b.courses.push_back({e.drug, {}});
      it = b.courses.end() - 1;
    }
    it->doses.push_back({static_cast<long long>(std::floor(e.time_h)), e.dose});
  }
  return b;
}

SimulationRun run_simulation(const PatientRecord& record, const OrchestratorConfig& cfg,
                             const RunServices& services) {
  cfg.validate();
  const IndicatorGrid grid = preprocess(record, cfg.preprocess);
  const std::size_t w = cfg.window.w;
  if (grid.length < w + 1) {
    throw RunRejected("patient " + record.patient_id + ": grid of " + std::to_string(grid.length) +
                      " steps is shorter than w + 1 = " + std::to_string(w + 1));
  }
  const std::size_t start = cfg.start_index.value_or(w);
  if (start < w || start >= grid.length) {
    throw RunRejected("start_index must lie in [w, grid length)");
  }
  const std::size_t horizon = std::min(cfg.horizon, grid.length - start);

  RunState st;
  st.record = &record;
  st.grid = &grid;
  st.cfg = &cfg;
  st.base_text = describe_base_info(record.patient_id, record.base_info);
  st.simulator = services.simulator ? services.simulator : make_backend(cfg.simulator);
  st.analyzer = services.analyzer ? services.analyzer : make_backend(cfg.analyzer);
  if (cfg.mechanism == ReferenceMechanism::Backend) {
    st.correlator = services.correlator ? services.correlator : make_backend(cfg.correlator);
  }
  if (cfg.compensator_cfg.estimator == CompensatorConfig::Estimator::Backend) {
    st.compensator = services.compensator ? services.compensator : make_backend(cfg.compensator);
  }
  if (cfg.mechanism == ReferenceMechanism::Rl) {
    if (services.policy) {
      st.policy = services.policy;
    } else if (cfg.policy_path) {
      st.policy = std::make_shared<PolicyParams>(PolicyParams::load(*cfg.policy_path));
    } else {
      st.policy = std::make_shared<PolicyParams>();
    }
  }
  if (services.baselines) st.baselines = *services.baselines;
  st.gain = services.compensator_gain ? *services.compensator_gain : cfg.compensator_cfg.gain;
  for (const auto& s : grid.series) st.buffer.push_back(s.values);
  st.histories.assign(kSystemCount, ResidualHistory(cfg.compensator_cfg.history_depth));
  for (auto sys : cfg.systems) {
    SystemView v{sys, {}};
    for (std::size_t idx = 0; idx < grid.series.size(); ++idx) {
      if (grid.series[idx].system == sys && grid.series[idx].available) v.series.push_back(idx);
    }
    st.views.push_back(std::move(v));
  }
  // Candidates come from every system of the grid, not only the simulated ones.
  for (auto sys : kAllSystems) {
    SystemView v{sys, {}};
    for (std::size_t idx = 0; idx < grid.series.size(); ++idx) {
      if (grid.series[idx].system == sys && grid.series[idx].available) v.series.push_back(idx);
    }
    st.candidate_views.push_back(std::move(v));
  }

  SimulationRun run;
  run.patient_id = record.patient_id;
  run.mode = cfg.mode;
  run.seed = cfg.seed;
  run.config = cfg;
  run.provenance = record.provenance;
  run.start_index = start;
  run.horizon = horizon;

  for (std::size_t k = 0; k < horizon; ++k) {
    const std::size_t i = start + k;
    std::vector<StepOutput> outs(st.views.size());
    const auto run_one = [&](std::size_t j) { outs[j] = step_system(st, st.views[j], k, i); };
    if (cfg.parallel_systems && outs.size() > 1) {
      std::vector<std::thread> threads;
      for (std::size_t j = 0; j < outs.size(); ++j) threads.emplace_back(run_one, j);
      for (auto& t : threads) t.join();
    } else {
      for (std::size_t j = 0; j < outs.size(); ++j) run_one(j);
    }

    // Commit in system order once every system of this step is done.
    std::vector<std::pair<double, double>> gain_samples;
    for (auto& o : outs) {
      auto& s = o.step;
      const auto sys = static_cast<std::size_t>(s.system);
      if (s.summary_row) st.logs[sys].push_back(*s.summary_row);
      if (!s.skipped) {
        auto& hist = st.histories[sys];
        for (std::size_t n = 0; n < s.indicators.size(); ++n) {
          std::optional<double> realised;
          if (s.valid && s.gated[n] && cfg.mode == RunMode::TeacherForced &&
              std::isfinite(s.truth[n])) {
            realised = s.truth[n] - s.referenced_values[n];
            gain_samples.emplace_back(history_mean(hist.get(s.indicators[n])), *realised);
          }
          hist.push(s.indicators[n], realised);
        }
      }
      if (s.reward_valid) {
        st.baselines[s.system] = ema_baseline_update(st.baselines[s.system], s.reward.reward,
                                                     cfg.ppo.alpha_ema);
      }
      if (o.transition && s.valid && s.reward_valid && services.transitions) {
        services.transitions->push_back(std::move(*o.transition));
      }
      if (cfg.mode == RunMode::FreeRunning && !s.skipped) {
        std::size_t n = 0;
        for (const auto& v : st.views) {
          if (v.system != s.system) continue;
          for (auto idx : v.series) st.buffer[idx][i] = s.final_values[n++];
        }
      }
      run.steps.push_back(std::move(s));
    }
    if (cfg.compensator_cfg.train) {
      st.gain = update_gain(st.gain, gain_samples, cfg.compensator_cfg.learning_rate);
    }
  }
  if (services.baselines) *services.baselines = st.baselines;
  if (services.compensator_gain) *services.compensator_gain = st.gain;
  return run;
}

void prime_replay_with_truth(const PatientRecord& record, const OrchestratorConfig& cfg,
                             const std::string& cache_dir) {
  const auto grid = preprocess(record, cfg.preprocess);
  RunServices svc;
  svc.simulator = std::make_shared<RecordingBackend>(
      std::make_shared<TruthOracleBackend>(grid, make_backend(cfg.analyzer)), cache_dir);
  run_simulation(record, cfg, svc);
}

}  // namespace organsim

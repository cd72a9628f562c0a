#include "organsim/backends.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "organsim/errors.hpp"
#include "organsim/hashing.hpp"
#include "organsim/numfmt.hpp"
#include "organsim/objectives.hpp"

namespace organsim {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string_view mode_name(TrendMode m) { return m == TrendMode::Linear ? "linear" : "last_value"; }

TrendMode parse_mode(const std::string& s) {
  if (s == "last_value") return TrendMode::LastValue;
  if (s == "linear") return TrendMode::Linear;
  throw ValidationError("unknown trend mode '" + s + "'");
}

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> keys,
                         std::string_view where) {
  if (!j.is_object()) throw ValidationError(std::string(where) + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ValidationError(std::string(where) + ": unknown key '" + k + "'");
    }
  }
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Standard normal draws from a splitmix stream (Box-Muller).
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : state_(seed) {}
  double next() {
    state_ = splitmix64(state_);
    double u1 = unit_double(state_);
    state_ = splitmix64(state_);
    const double u2 = unit_double(state_);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t state_;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

json BackendDescriptor::to_json() const {
  return {{"kind", kind}, {"config", config}, {"deterministic_seed", deterministic_seed}};
}

BackendDescriptor BackendDescriptor::from_json(const json& j) {
  reject_unknown_keys(j, {"kind", "config", "deterministic_seed"}, "backend");
  BackendDescriptor d;
  d.kind = j.value("kind", std::string("surrogate"));
  d.config = j.value("config", json::object());
  d.deterministic_seed = j.value("deterministic_seed", std::uint64_t{0});
  if (d.kind != "surrogate" && d.kind != "replay" && d.kind != "remote") {
    throw ValidationError("unknown backend kind '" + d.kind + "'");
  }
  return d;
}

std::shared_ptr<const AgentBackend> make_backend(const BackendDescriptor& d) {
  if (d.kind == "surrogate") {
    auto cfg = SurrogateConfig::from_json(d.config);
    cfg.seed = d.deterministic_seed;
    return std::make_shared<SurrogateBackend>(std::move(cfg));
  }
  if (d.kind == "replay") {
    if (!d.config.contains("cache_dir")) throw ValidationError("replay backend needs config.cache_dir");
    return std::make_shared<ReplayBackend>(d.config.at("cache_dir").get<std::string>());
  }
  if (d.kind == "remote") return make_remote_backend(RemoteConfig::from_json(d.config));
  throw ValidationError("unknown backend kind '" + d.kind + "'");
}

TrendMode SurrogateConfig::mode_for(std::string_view qualified) const {
  if (auto it = modes.find(std::string(qualified)); it != modes.end()) return it->second;
  return default_mode;
}

double SurrogateConfig::scale_for(std::string_view qualified) const {
  if (auto it = residual_scales.find(std::string(qualified)); it != residual_scales.end()) {
    return it->second;
  }
  return residual_scale;
}

json SurrogateConfig::to_json() const {
  json j;
  j["default_mode"] = mode_name(default_mode);
  json m = json::object();
  for (const auto& [k, v] : modes) m[k] = mode_name(v);
  j["modes"] = m;
  j["residual_scale"] = residual_scale;
  j["residual_scales"] = residual_scales;
  json c = json::array();
  for (const auto& x : couplings) {
    json e{{"target", x.target}, {"reference", x.reference}, {"coefficient", x.coefficient}};
    if (x.baseline) e["baseline"] = *x.baseline;
    c.push_back(e);
  }
  j["couplings"] = c;
  j["distractor_coupling"] = distractor_coupling;
  json d = json::array();
  for (const auto& x : drug_effects) {
    d.push_back({{"drug", x.drug}, {"target", x.target}, {"gain", x.gain}, {"duration_h", x.duration_h}});
  }
  j["drug_effects"] = d;
  j["noise_sd"] = noise_sd;
  j["analyzer"] = {{"lookback", analyzer.lookback},
                   {"heartbeat_h", analyzer.heartbeat_h},
                   {"relative_delta", analyzer.trend.relative_delta},
                   {"default_floor", analyzer.trend.default_floor},
                   {"floors", analyzer.trend.floors}};
  j["compensator_gain"] = compensator_gain;
  return j;
}

SurrogateConfig SurrogateConfig::from_json(const json& j) {
  reject_unknown_keys(j,
                      {"default_mode", "modes", "residual_scale", "residual_scales", "couplings",
                       "distractor_coupling", "drug_effects", "noise_sd", "analyzer",
                       "compensator_gain"},
                      "surrogate config");
  SurrogateConfig c;
  const auto& table = SystemTable::canonical();
  const auto check_indicator = [&](const std::string& q) {
    if (!table.find_qualified(q)) throw ValidationError("surrogate config: unknown indicator '" + q + "'");
  };
  try {
    if (j.contains("default_mode")) c.default_mode = parse_mode(j.at("default_mode").get<std::string>());
    if (j.contains("modes")) {
      for (const auto& [k, v] : j.at("modes").items()) {
        check_indicator(k);
        c.modes[k] = parse_mode(v.get<std::string>());
      }
    }
    c.residual_scale = j.value("residual_scale", c.residual_scale);
    if (j.contains("residual_scales")) {
      c.residual_scales = j.at("residual_scales").get<std::map<std::string, double>>();
    }
    if (j.contains("couplings")) {
      for (const auto& e : j.at("couplings")) {
        SurrogateCoupling x;
        x.target = e.at("target").get<std::string>();
        x.reference = e.at("reference").get<std::string>();
        check_indicator(x.target);
        check_indicator(x.reference);
        x.coefficient = e.at("coefficient").get<double>();
        if (e.contains("baseline") && !e.at("baseline").is_null()) x.baseline = e.at("baseline").get<double>();
        c.couplings.push_back(std::move(x));
      }
    }
    c.distractor_coupling = j.value("distractor_coupling", 0.0);
    if (j.contains("drug_effects")) {
      for (const auto& e : j.at("drug_effects")) {
        SurrogateDrugEffect x;
        x.drug = e.at("drug").get<std::string>();
        x.target = e.at("target").get<std::string>();
        check_indicator(x.target);
        x.gain = e.at("gain").get<double>();
        x.duration_h = e.value("duration_h", 1.0);
        c.drug_effects.push_back(std::move(x));
      }
    }
    c.noise_sd = j.value("noise_sd", 0.0);
    if (j.contains("analyzer")) {
      const auto& a = j.at("analyzer");
      c.analyzer.lookback = a.value("lookback", c.analyzer.lookback);
      c.analyzer.heartbeat_h = a.value("heartbeat_h", c.analyzer.heartbeat_h);
      c.analyzer.trend.relative_delta = a.value("relative_delta", c.analyzer.trend.relative_delta);
      c.analyzer.trend.default_floor = a.value("default_floor", c.analyzer.trend.default_floor);
      if (a.contains("floors")) c.analyzer.trend.floors = a.at("floors").get<std::map<std::string, double>>();
    }
    c.compensator_gain = j.value("compensator_gain", 1.0);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("surrogate config: ") + e.what());
  }
  if (!(c.residual_scale >= 0.0)) throw ValidationError("residual_scale must be >= 0");
  if (!(c.noise_sd >= 0.0)) throw ValidationError("noise_sd must be >= 0");
  if (c.analyzer.lookback < 2) throw ValidationError("analyzer.lookback must be >= 2");
  return c;
}

double trend_forecast(std::span<const double> v, TrendMode mode) {
  if (v.empty()) throw ValidationError("empty window");
  if (mode == TrendMode::LastValue || v.size() < 2) return v.back();
  // Least-squares line through (i, v[i]) evaluated at i = n.
  const double n = static_cast<double>(v.size());
  const double xbar = (n - 1.0) / 2.0;
  const double ybar = mean_of(v);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double dx = static_cast<double>(i) - xbar;
    sxy += dx * (v[i] - ybar);
    sxx += dx * dx;
  }
  return ybar + (sxy / sxx) * (n - xbar);
}

double rolling_error(std::span<const double> v, TrendMode mode) {
  const std::size_t first = mode == TrendMode::Linear ? 2 : 1;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = first; i < v.size(); ++i) {
    sum += std::fabs(v[i] - trend_forecast(v.subspan(0, i), mode));
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

ParsedSimulation surrogate_predict(const SystemWindowBlock& window,
                                   std::span<const ReferenceEntry> references,
                                   const SurrogateConfig& cfg, const TreatmentBlock* treatments,
                                   std::uint64_t noise_key) {
  ParsedSimulation out;
  NormalStream noise(mix_seed(cfg.seed, noise_key));
  for (const auto& s : window.series) {
    if (s.values.empty()) throw ValidationError("empty window for " + s.name);
    const auto q = qualified_name(window.system, s.name);
    const auto mode = cfg.mode_for(q);
    double pred = trend_forecast(s.values, mode);
    for (const auto& ref : references) {
      if (ref.values.empty()) continue;
      const SurrogateCoupling* coupling = nullptr;
      for (const auto& c : cfg.couplings) {
        if (c.target == q && c.reference == ref.indicator) coupling = &c;
      }
      if (coupling) {
        const double base = coupling->baseline ? *coupling->baseline : mean_of(ref.values);
        pred += coupling->coefficient * (ref.values.back() - base);
      } else if (cfg.distractor_coupling != 0.0) {
        pred += cfg.distractor_coupling * (ref.values.back() - mean_of(ref.values));
      }
    }
    if (treatments) {
      for (const auto& fx : cfg.drug_effects) {
        if (fx.target != q) continue;
        for (const auto& course : treatments->courses) {
          if (course.drug != fx.drug) continue;
          for (const auto& d : course.doses) {
            const double h = static_cast<double>(d.hour);
            if (h <= window.end_h && window.end_h < h + fx.duration_h) pred += fx.gain * d.dose;
          }
        }
      }
    }
    if (cfg.noise_sd > 0.0) pred += cfg.noise_sd * noise.next();
    const double conf = std::exp(-cfg.scale_for(q) * rolling_error(s.values, mode));
    out.entries.push_back({q, pred, std::clamp(conf, 0.0, 1.0)});
  }
  return out;
}

ParsedSimulation surrogate_predict(const WindowSample& window,
                                   std::span<const ReferenceEntry> references,
                                   const SurrogateConfig& cfg) {
  SystemWindowBlock w;
  w.system = window.system;
  w.start_h = window.window_start_h;
  w.end_h = window.window_end_h;
  for (std::size_t i = 0; i < window.indicators.size(); ++i) {
    w.series.push_back({window.indicators[i], window.values[i]});
  }
  return surrogate_predict(w, references, cfg);
}

SurrogateConfig fit_calibration(SurrogateConfig cfg, std::span<const CalibrationSample> samples,
                                double lambda, bool per_indicator) {
  const auto fit = [&](const std::vector<const CalibrationSample*>& group) {
    const auto loss = [&](double s) {
      double total = 0.0;
      for (const auto* x : group) {
        total += sft_constraint_loss(x->pred, std::exp(-s * x->estimated_error), x->truth, lambda);
      }
      return total;
    };
    double best = 0.0, best_loss = loss(0.0);
    for (int i = 0; i <= 240; ++i) {
      const double s = std::pow(10.0, -4.0 + i * 0.025);
      const double l = loss(s);
      if (l < best_loss) best_loss = l, best = s;
    }
    double lo = best > 0 ? best / std::pow(10.0, 0.025) : 0.0;
    double hi = best > 0 ? best * std::pow(10.0, 0.025) : 1e-4;
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 80; ++it) {
      const double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
      if (loss(a) < loss(b)) hi = b; else lo = a;
    }
    const double mid = 0.5 * (lo + hi);
    return loss(mid) < best_loss ? mid : best;
  };
  if (samples.empty()) return cfg;
  if (!per_indicator) {
    std::vector<const CalibrationSample*> all;
    for (const auto& s : samples) all.push_back(&s);
    cfg.residual_scale = fit(all);
    cfg.residual_scales.clear();
    return cfg;
  }
  std::map<std::string, std::vector<const CalibrationSample*>> groups;
  for (const auto& s : samples) groups[s.indicator].push_back(&s);
  for (const auto& [name, group] : groups) cfg.residual_scales[name] = fit(group);
  return cfg;
}

double history_mean(std::span<const std::optional<double>> history) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : history) {
    if (v) sum += *v, ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

std::string SurrogateBackend::generate(std::string_view prompt) const {
  const auto p = parse_prompt(prompt);
  const auto& win = *p.system_window();
  switch (p.kind) {
    case PromptKind::SimulatorStage1:
    case PromptKind::SimulatorStage2: {
      std::span<const ReferenceEntry> refs;
      if (const auto* r = p.get<ReferenceBlock>()) refs = r->entries;
      return render_output(
          surrogate_predict(win, refs, cfg_, p.get<TreatmentBlock>(), hash_text(prompt)));
    }
    case PromptKind::Analyzer: {
      SummaryBlock b;
      auto row = analyze_window(win, cfg_.analyzer, cfg_.analyzer.heartbeat_due(win.end_h));
      if (!row.events.empty()) b.rows.push_back(std::move(row));
      return render_output(b);
    }
    case PromptKind::Correlator: {
      ReferenceBlock b;
      if (const auto* c = p.get<CandidateBlock>()) {
        for (const auto& cand : c->entries) {
          for (const auto& cp : cfg_.couplings) {
            const auto* info = SystemTable::canonical().find_qualified(cp.target);
            if (info && info->system == win.system && cp.reference == cand) {
              b.entries.push_back({cand, {}});
              break;
            }
          }
        }
      }
      return render_output(b);
    }
    case PromptKind::Compensator: {
      ResidualBlock b;
      const auto* sim = p.get<SimulationBlock>();
      const auto* his = p.get<ResidualHistoryBlock>();
      for (const auto& e : sim->entries) {
        ResidualEntry r{e.indicator, std::nullopt};
        if (e.confidence < p.gate_threshold) {
          double m = 0.0;
          if (his) {
            for (const auto& row : his->rows) {
              if (row.indicator == e.indicator) m = history_mean(row.values);
            }
          }
          r.residual = cfg_.compensator_gain * m;
        }
        b.entries.push_back(std::move(r));
      }
      return render_output(b);
    }
  }
  throw Error("unhandled prompt kind");
}

std::string ReplayBackend::cache_path(const std::string& dir, std::string_view prompt) {
  return (fs::path(dir) / (sha256_hex(prompt) + ".txt")).string();
}

void ReplayBackend::prime(const std::string& dir, std::string_view prompt,
                          std::string_view completion) {
  fs::create_directories(dir);
  const auto path = cache_path(dir, prompt);
  const auto tmp = path + ".tmp" + std::to_string(hash_text(completion) ^ std::hash<std::string>{}(path));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write replay cache entry " + tmp);
    out.write(completion.data(), static_cast<std::streamsize>(completion.size()));
  }
  fs::rename(tmp, path);
}

std::string ReplayBackend::generate(std::string_view prompt) const {
  const fs::path path = cache_path(dir_, prompt);
  if (!fs::exists(path)) throw CacheMiss("replay cache has no completion for prompt " + path.stem().string());
  return read_file(path);
}

std::string RecordingBackend::generate(std::string_view prompt) const {
  auto out = inner_->generate(prompt);
  ReplayBackend::prime(dir_, prompt, out);
  return out;
}

std::string TruthOracleBackend::generate(std::string_view prompt) const {
  const auto p = parse_prompt(prompt);
  if (p.kind != PromptKind::SimulatorStage1 && p.kind != PromptKind::SimulatorStage2) {
    return inner_->generate(prompt);
  }
  const auto& win = *p.system_window();
  const double pos = (win.end_h - grid_.start_h) / grid_.step_h + 1.0;
  const auto idx = static_cast<std::size_t>(std::llround(pos));
  if (pos < 0 || idx >= grid_.length) throw Error("oracle: target time outside the grid");
  SimulationBlock b;
  for (const auto& s : win.series) {
    const auto* ser = grid_.find(s.name);
    if (!ser) throw Error("oracle: grid has no " + s.name);
    b.entries.push_back({qualified_name(win.system, s.name), ser->values[idx], 1.0});
  }
  return render_output(b);
}

}  // namespace organsim

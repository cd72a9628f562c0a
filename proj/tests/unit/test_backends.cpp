#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "../support/figures.hpp"
#include "organsim/backends.hpp"
#include "organsim/objectives.hpp"

using namespace organsim;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  const auto p = fs::temp_directory_path() / ("organsim-test-" + tag + "-" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

SystemWindowBlock resp_window(std::vector<double> po2) {
  return {System::Respiratory, 0.0, 0.5 * static_cast<double>(po2.size() - 1), {{"pO2", std::move(po2)}}};
}

}  // namespace

TEST_CASE("trend forecasts") {
  const std::vector<double> line{1, 2, 3, 4, 5, 6};
  CHECK(trend_forecast(line, TrendMode::Linear) == doctest::Approx(7.0).epsilon(1e-12));
  const std::vector<double> pco2{46, 46, 46, 33, 33, 31};
  CHECK(trend_forecast(pco2, TrendMode::LastValue) == 31.0);
  CHECK(rolling_error(line, TrendMode::Linear) == doctest::Approx(0.0).epsilon(1e-12));
  // Last-value errors on pco2: 0, 0, 13, 0, 2.
  CHECK(rolling_error(pco2, TrendMode::LastValue) == doctest::Approx(3.0));
}

TEST_CASE("surrogate confidence is exp(-scale * rolling error)") {
  SurrogateConfig cfg;
  cfg.residual_scale = 0.5;
  const auto w = figs::window();
  const auto sim = surrogate_predict(w, {}, cfg);
  REQUIRE(sim.entries.size() == w.series.size());
  for (std::size_t i = 0; i < w.series.size(); ++i) {
    CHECK(sim.entries[i].value == w.series[i].values.back());
    CHECK(sim.entries[i].confidence == std::exp(-0.5 * rolling_error(w.series[i].values, TrendMode::LastValue)));
    CHECK(sim.entries[i].confidence >= 0.0);
    CHECK(sim.entries[i].confidence <= 1.0);
  }
}

TEST_CASE("coupled reference removes the coupling error exactly") {
  // y[t+1] = y[t] + 0.5 (d[t] - 80)
  SurrogateConfig cfg;
  cfg.couplings.push_back({"Respiratory.pO2", "Cardiovascular.Arterial Blood Pressure mean", 0.5, 80.0});
  const std::vector<double> d{82, 79, 84, 86, 77, 90};
  std::vector<double> y{100};
  for (std::size_t t = 0; t + 1 < d.size(); ++t) y.push_back(y.back() + 0.5 * (d[t] - 80));
  const double truth = y.back() + 0.5 * (d.back() - 80);
  const std::vector<ReferenceEntry> refs{{"Cardiovascular.Arterial Blood Pressure mean", d}};
  const auto with = surrogate_predict(resp_window(y), refs, cfg);
  const auto without = surrogate_predict(resp_window(y), {}, cfg);
  CHECK(with.entries[0].value == truth);
  CHECK(std::fabs(without.entries[0].value - truth) == 0.5 * (d.back() - 80));

  // Names-only references carry no values and have no effect.
  const std::vector<ReferenceEntry> names{{"Cardiovascular.Arterial Blood Pressure mean", {}}};
  CHECK(surrogate_predict(resp_window(y), names, cfg) == without);

  // Uncoupled references are ignored unless the surrogate is distractible.
  const std::vector<ReferenceEntry> decoy{{"Renal.Sodium", {140, 141, 139, 145, 138, 150}}};
  CHECK(surrogate_predict(resp_window(y), decoy, cfg) == without);
  cfg.distractor_coupling = 0.5;
  const double mean = (140 + 141 + 139 + 145 + 138 + 150) / 6.0;
  CHECK(surrogate_predict(resp_window(y), decoy, cfg).entries[0].value ==
        doctest::Approx(y.back() + 0.5 * (150 - mean)));
}

TEST_CASE("drug effects apply while the dose is active") {
  SurrogateConfig cfg;
  cfg.drug_effects.push_back({"Propofol", "Respiratory.pO2", 2.0, 1.0});
  const auto w = resp_window({100, 100, 100});  // window ends at 1.0 h
  TreatmentBlock active{{{"Propofol", {{1, 3.0}}}}};
  TreatmentBlock expired{{{"Propofol", {{0, 3.0}}}}};
  CHECK(surrogate_predict(w, {}, cfg, &active).entries[0].value == 106.0);
  CHECK(surrogate_predict(w, {}, cfg, &expired).entries[0].value == 100.0);
}

TEST_CASE("surrogate is bit-reproducible with noise") {
  SurrogateConfig cfg;
  cfg.noise_sd = 1.0;
  cfg.seed = 5;
  SurrogateBackend a(cfg), b(cfg);
  StructuredPrompt p{PromptKind::SimulatorStage1, {figs::window()}};
  const auto text = render_prompt(p);
  CHECK(a.generate(text) == b.generate(text));
  cfg.seed = 6;
  CHECK(SurrogateBackend(cfg).generate(text) != a.generate(text));
}

TEST_CASE("surrogate answers every prompt kind within the grammar") {
  SurrogateConfig cfg;
  cfg.couplings.push_back({"Respiratory.pO2", "Cardiovascular.Heart Rate", 0.1, std::nullopt});
  SurrogateBackend be(cfg);
  std::vector<std::string> expected;
  for (const auto& s : figs::window().series) expected.push_back("Respiratory." + s.name);

  const auto s1 = be.generate(render_prompt({PromptKind::SimulatorStage1, {figs::window()}}));
  CHECK(validate_output(s1, OutputKind::Simulation, expected).empty());
  const auto an = be.generate(render_prompt({PromptKind::Analyzer, {figs::window()}}));
  CHECK(validate_output(an, OutputKind::Summary).empty());
  const auto co = be.generate(render_prompt(
      {PromptKind::Correlator, {figs::window(), CandidateBlock{{"Cardiovascular.Heart Rate", "Renal.Sodium"}}}}));
  const auto refs = parse_reference_block(co, System::Respiratory);
  CHECK(refs.violations.empty());
  REQUIRE(refs.entries.size() == 1);
  CHECK(refs.entries[0].indicator == "Cardiovascular.Heart Rate");
  const auto cp = be.generate(render_prompt(
      {PromptKind::Compensator, {figs::window(), figs::simulation(true), figs::residual_history()}}));
  CHECK(validate_output(cp, OutputKind::Residual, expected).empty());
  // Every stage-2 confidence in the figure is at least 0.8: nothing is gated.
  CHECK(parse_residual_block(cp) == figs::residual_output());
  auto low = figs::simulation(true);
  low.entries[0].confidence = 0.5;   // pH, history {0.02}
  low.entries[1].confidence = 0.79;  // pCO2, history {-2.0, 0.5}
  const auto res = parse_residual_block(be.generate(
      render_prompt({PromptKind::Compensator, {figs::window(), low, figs::residual_history()}})));
  CHECK(res.get("Respiratory.pH") == doctest::Approx(0.02));
  CHECK(res.get("Respiratory.pCO2") == doctest::Approx(-0.75));
  CHECK_FALSE(res.get("Respiratory.pO2").has_value());
}

TEST_CASE("replay returns primed completions verbatim and misses loudly") {
  const auto dir = temp_dir("replay");
  const auto prompt = figs::read_fixture("simulator_s1_prompt.txt");
  const auto completion = figs::read_fixture("simulator_s1_output.txt");
  ReplayBackend::prime(dir, prompt, completion);
  ReplayBackend rb(dir);
  CHECK(rb.generate(prompt) == completion);
  CHECK_THROWS_AS(rb.generate(prompt + " "), CacheMiss);

  BackendDescriptor d;
  d.kind = "replay";
  d.config = {{"cache_dir", dir}};
  CHECK(make_backend(d)->generate(prompt) == completion);
  d.config = nlohmann::json::object();
  CHECK_THROWS_AS(make_backend(d), ValidationError);
  d.kind = "psychic";
  CHECK_THROWS_AS(make_backend(d), ValidationError);

  const auto dir2 = temp_dir("record");
  RecordingBackend rec(std::make_shared<SurrogateBackend>(SurrogateConfig{}), dir2);
  const auto out = rec.generate(prompt);
  CHECK(ReplayBackend(dir2).generate(prompt) == out);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("truth oracle reads the next grid cell") {
  IndicatorGrid g;
  g.length = 4;
  g.series.push_back({"pO2", System::Respiratory, {90, 91, 92, 93}, {true, true, true, true}, {1, 1, 1, 1}, true});
  TruthOracleBackend o(g, std::make_shared<SurrogateBackend>(SurrogateConfig{}));
  const SystemWindowBlock w{System::Respiratory, 0.0, 1.0, {{"pO2", {90, 91, 92}}}};
  const auto sim = parse_simulation_block(o.generate(render_prompt({PromptKind::SimulatorStage1, {w}})));
  CHECK(sim.entries[0].value == 93.0);
  CHECK(sim.entries[0].confidence == 1.0);
}

TEST_CASE("calibration finds a scale no worse than the grid optimum") {
  std::vector<CalibrationSample> samples;
  for (int i = 0; i < 50; ++i) {
    const double err = 0.1 * i;
    samples.push_back({"Respiratory.pH", err, 1.0 + 0.8 * err, 1.0});
  }
  const auto fitted = fit_calibration(SurrogateConfig{}, samples);
  const auto loss = [&](double s) {
    double t = 0;
    for (const auto& x : samples) t += sft_constraint_loss(x.pred, std::exp(-s * x.estimated_error), x.truth);
    return t;
  };
  for (double s = 0.01; s < 10; s *= 1.1) CHECK(loss(fitted.residual_scale) <= loss(s) + 1e-12);
  const auto per = fit_calibration(SurrogateConfig{}, samples, 1.0, true);
  CHECK(per.residual_scales.count("Respiratory.pH") == 1);
}

TEST_CASE("remote backend retries transient failures then gives up") {
  httplib::Server srv;
  std::atomic<int> calls{0};
  std::string seen_auth;
  srv.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++calls;
    seen_auth = req.get_header_value("Authorization");
    if (n == 1) {
      res.status = 503;
      return;
    }
    const auto body = nlohmann::json::parse(req.body);
    res.set_content(nlohmann::json{{"completion", "echo:" + body.at("prompt").get<std::string>()}}.dump(),
                    "application/json");
  });
  srv.Post("/down", [&](const httplib::Request&, httplib::Response& res) { res.status = 502; });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  ::setenv("ORGANSIM_TEST_TOKEN", "sekret", 1);
  RemoteConfig cfg;
  cfg.url = "http://127.0.0.1:" + std::to_string(port);
  cfg.token_env = "ORGANSIM_TEST_TOKEN";
  cfg.max_retries = 2;
  cfg.timeout_ms = 2000;
  auto be = make_remote_backend(cfg);
  CHECK(be->generate("hi") == "echo:hi");
  CHECK(calls == 2);
  CHECK(seen_auth == "Bearer sekret");

  cfg.path = "/down";
  cfg.max_retries = 1;
  CHECK_THROWS_AS(make_remote_backend(cfg)->generate("x"), RetryableBackendError);

  srv.stop();
  th.join();
  CHECK_THROWS_AS(RemoteConfig::from_json({{"url", "http://x"}, {"max_in_flight", 0}}), ValidationError);
}

TEST_CASE("descriptor JSON round trip") {
  BackendDescriptor d;
  d.kind = "surrogate";
  SurrogateConfig sc;
  sc.default_mode = TrendMode::Linear;
  sc.couplings.push_back({"Respiratory.pO2", "Cardiovascular.Heart Rate", 0.3, 70.0});
  d.config = sc.to_json();
  d.deterministic_seed = 9;
  const auto back = BackendDescriptor::from_json(d.to_json());
  CHECK(back.kind == "surrogate");
  CHECK(back.deterministic_seed == 9);
  CHECK(SurrogateConfig::from_json(back.config).to_json() == sc.to_json());
}

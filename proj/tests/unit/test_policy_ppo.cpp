#include <doctest.h>

#include <filesystem>

#include "../support/ppo_fixtures.hpp"
#include "organsim/errors.hpp"
#include "organsim/policy.hpp"
#include "organsim/ppo.hpp"
#include "organsim/synthetic.hpp"

using namespace organsim;

TEST_CASE("analytic policy gradient matches central differences") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 100; ++i) {
    const auto in = ppofix::random_instance(rng);
    CHECK(ppofix::max_gradient_error(in) <= 1e-4);
  }
}

TEST_CASE("action log probability and sampling") {
  const std::vector<double> z{-2.0, 0.0, 3.0};
  const std::vector<bool> m{false, true, true};
  const double lp = action_log_prob(m, z);
  CHECK(lp == doctest::Approx(std::log(1 - sigmoid(-2.0)) + std::log(0.5) + std::log(sigmoid(3.0))));

  SplitMixRng a(5), b(5);
  for (int i = 0; i < 100; ++i) {
    const auto x = sample_action(z, a);
    const auto y = sample_action(z, b);
    CHECK(x.mask == y.mask);
    CHECK(x.log_prob_old == action_log_prob(x.mask, z));
    CHECK(x.selected_count() == static_cast<std::size_t>(std::count(x.mask.begin(), x.mask.end(), true)));
  }
  const auto g = greedy_action(z);
  CHECK(g.mask == std::vector<bool>{false, false, true});

  // Empirical selection frequency tracks sigmoid(z).
  SplitMixRng r(9);
  int hits = 0;
  const std::vector<double> one{0.8};
  for (int i = 0; i < 20000; ++i) hits += sample_action(one, r).mask[0];
  CHECK(hits / 20000.0 == doctest::Approx(sigmoid(0.8)).epsilon(0.02));
}

TEST_CASE("reward record") {
  const auto r = RewardRecord::make(2.0, 0.5, 0.25);
  CHECK(r.reward == 1.5);
  CHECK(r.advantage == 1.25);
  CHECK(r.mse_baseline == 2.0);
  CHECK(r.mse_referenced == 0.5);
}

TEST_CASE("pearson correlation") {
  const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1}, k{5, 5, 5, 5};
  CHECK(pearson(a, b) == doctest::Approx(1.0));
  CHECK(pearson(a, c) == doctest::Approx(-1.0));
  CHECK(pearson(a, k) == 0.0);
}

TEST_CASE("encoded features are finite and bias is 1") {
  CorrelatorState st;
  st.system = System::Respiratory;
  st.window = {System::Respiratory, 0, 2.5, {{"pO2", {90, 91, 95, 92, 93, 99}}}};
  st.candidates = {"Cardiovascular.Heart Rate", "Renal.Sodium"};
  st.candidate_values = {{80, 82, 85, 83, 84, 90}, {140, 140, 140, 140, 140, 140}};
  st.current_time_h = 2.5;
  st.treatments = {{"Propofol", 2.0, 1.0}};
  st.summary_events = {{2.5, "Cardiovascular.Heart Rate", TrendType::Rise, 90}};
  const auto f = encode_state(st);
  REQUIRE(f.size() == 2);
  for (const auto& row : f) {
    CHECK(row[0] == 1.0);
    for (double x : row) CHECK(std::isfinite(x));
  }
  CHECK(f[0][1] > 0.5);   // heart rate tracks pO2
  CHECK(f[1][1] == 0.0);  // constant sodium has no correlation
}

TEST_CASE("policy params persist with a version and reject mismatches") {
  PolicyParams p;
  p.weights[System::Renal]["Blood.Hemoglobin"] = std::vector<double>(kFeatureCount, 0.25);
  const auto j = p.to_json();
  CHECK(j.at("version") == std::string(PolicyParams::kVersion));
  const auto back = PolicyParams::from_json(j);
  CHECK(back.weights == p.weights);
  auto bad = j;
  bad["version"] = "other";
  CHECK_THROWS_AS(PolicyParams::from_json(bad), ValidationError);
  bad = j;
  bad["feature_map"] = nlohmann::json::array({"bias"});
  CHECK_THROWS_AS(PolicyParams::from_json(bad), ValidationError);

  const auto path = (std::filesystem::temp_directory_path() / "organsim-policy-test.json").string();
  p.save(path);
  CHECK(PolicyParams::load(path).weights == p.weights);
  std::filesystem::remove(path);
}

TEST_CASE("sparsity alone never raises the expected selection count") {
  std::mt19937_64 rng(23);
  for (Optimizer opt : {Optimizer::Sgd, Optimizer::Adam}) {
    auto in = ppofix::random_instance(rng);
    for (auto& tr : in.batch) tr.reward = RewardRecord::make(1.0, 1.0, 0.0);  // A = 0
    in.cfg.beta_entropy = 0.0;
    in.cfg.beta_sparsity = 0.1;
    in.cfg.learning_rate = 0.01;
    PpoTrainer trainer(in.params, in.cfg, opt);
    const auto expected_count = [&](const PolicyParams& p) {
      double s = 0;
      for (const auto& tr : in.batch)
        for (double z : p.logits(tr.system, tr.candidates, tr.features)) s += sigmoid(z);
      return s;
    };
    double prev = expected_count(trainer.params());
    for (int step = 0; step < 50; ++step) {
      trainer.step(in.batch);
      const double now = expected_count(trainer.params());
      if (opt == Optimizer::Sgd) CHECK(now <= prev + 1e-12);
      prev = now;
    }
    CHECK(expected_count(trainer.params()) < expected_count(in.params));
  }
}

TEST_CASE("trainer moves toward rewarded actions") {
  // One candidate whose selection always earns a positive advantage.
  PolicyParams p;
  PpoConfig cfg;
  cfg.beta_sparsity = 0;
  cfg.beta_entropy = 0;
  PpoTrainer tr(p, cfg);
  for (int s = 0; s < 50; ++s) {
    std::vector<Transition> batch;
    for (bool sel : {true, false}) {
      Transition t;
      t.candidates = {"Cardiovascular.Heart Rate"};
      FeatureVector f{};
      f[0] = 1.0;
      t.features = {f};
      t.mask = {sel};
      t.log_prob_old = action_log_prob(t.mask, tr.params().logits(t.system, t.candidates, t.features));
      t.reward = RewardRecord::make(1.0, sel ? 0.0 : 1.0, 0.5);
      batch.push_back(t);
    }
    tr.step(batch);
  }
  const FeatureVector f{1.0};
  CHECK(sigmoid(tr.params().logits(System::Respiratory, {"Cardiovascular.Heart Rate"}, {f})[0]) > 0.9);
  CHECK(tr.updates() == 50);
}

TEST_CASE("ppo config rejects invalid hyperparameters") {
  PpoConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(PpoTrainer(PolicyParams{}, c), ValidationError);
}

#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "../support/oracles.hpp"
#include "../support/runs.hpp"
#include "organsim/errors.hpp"
#include "organsim/metrics.hpp"
#include "organsim/pathway.hpp"
#include "organsim/report.hpp"

using namespace organsim;

namespace {

using Onsets = std::vector<std::optional<double>>;

std::size_t matched_count(const Onsets& p, const Onsets& t, double grace_steps) {
  const auto m = match_events(p, t, grace_steps, 0.5);
  return static_cast<std::size_t>(std::count_if(m.begin(), m.end(), [](const auto& e) { return e.matched; }));
}

Onsets random_chain(std::mt19937_64& rng, std::size_t n, double missing_p) {
  std::uniform_int_distribution<int> slot(0, 24);
  std::bernoulli_distribution missing(missing_p);
  Onsets out(n);
  for (auto& o : out) {
    if (!missing(rng)) o = 0.5 * slot(rng);
  }
  return out;
}

// Adjacent-swap reference for chain qualification.
bool qualifies_oracle(const Onsets& t) {
  for (const auto& x : t) {
    if (!x) return false;
  }
  auto sorted = [](const Onsets& v) {
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (*v[i] < *v[i - 1]) return false;
    }
    return true;
  };
  if (sorted(t)) return true;
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    auto u = t;
    std::swap(u[i], u[i + 1]);
    if (sorted(u)) return true;
  }
  return false;
}

IndicatorGrid grid_with(std::size_t length, const std::map<std::string, std::vector<double>>& series) {
  IndicatorGrid g;
  g.length = length;
  for (const auto& [name, values] : series) {
    IndicatorSeries s;
    const auto* info = SystemTable::canonical().find(name);
    REQUIRE(info);
    s.indicator = name;
    s.system = info->system;
    s.values = values;
    s.observed.assign(length, true);
    s.decay.assign(length, 1.0);
    g.series.push_back(std::move(s));
  }
  return g;
}

PathwayDefinition shock() {
  return PathwayDefinition::from_json(nlohmann::json::parse(R"({
    "name": "shock",
    "events": [
      {"indicator": "Cardiovascular.Non Invasive Blood Pressure systolic", "direction": "fall_below", "threshold": 90},
      {"indicator": "Coagulation.Lactate", "direction": "rise_above", "threshold": 2.0},
      {"indicator": "Cardiovascular.Heart Rate", "direction": "rise_above", "threshold": 100}
    ]})"));
}

// A series that crosses the event threshold first at `onset` cells.
std::vector<double> crossing(std::size_t length, std::size_t onset, double before, double after) {
  std::vector<double> v(length, before);
  for (std::size_t i = onset; i < length; ++i) v[i] = after;
  return v;
}

}  // namespace

TEST_CASE("matched count equals the exhaustive best assignment") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 7;
    const auto truth = random_chain(rng, n, 0.1);
    auto pred = truth;
    std::uniform_int_distribution<int> jitter(-5, 5);
    for (auto& p : pred) {
      if (p && rng() % 8 != 0) *p = std::max(0.0, *p + 0.5 * jitter(rng));
      else if (rng() % 2) p = std::nullopt;
    }
    const auto got = matched_count(pred, truth, 3.0);
    CHECK(got == oracle::best_assignment(pred, truth, 1.5));
    CHECK(pathway_accuracy(pred, truth, 3.0) == doctest::Approx(double(got) / double(n)).epsilon(1e-15));
  }
}

TEST_CASE("accuracy never drops as the grace grows") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 3 + rng() % 5;
    const auto truth = random_chain(rng, n, 0.05);
    const auto pred = random_chain(rng, n, 0.05);
    double last = -1.0;
    for (double g = 0.0; g <= 30.0; g += 1.0) {
      const double a = pathway_accuracy(pred, truth, g);
      CHECK(a >= last);
      last = a;
    }
  }
}

TEST_CASE("worked examples") {
  const Onsets truth{1.0, 2.0, 3.0, 4.0, 5.0};
  const Onsets pred{1.0, 2.5, 3.0, 6.0, 5.5};  // fourth event is 2 h late
  CHECK(pathway_accuracy(pred, truth, 3.0) == doctest::Approx(0.8));
  const auto m = match_events(pred, truth, 3.0, 0.5);
  CHECK(*trigger_time_deviation(m) == doctest::Approx((0.0 + 0.5 + 0.0 + 0.5) / 4.0));
  CHECK(normalized_event_error(95.0, 90.0, 60.0, 160.0) == doctest::Approx(0.05));
  CHECK_THROWS_AS(normalized_event_error(1.0, 2.0, 5.0, 5.0), ValidationError);
  CHECK_FALSE(trigger_time_deviation(match_events(Onsets{std::nullopt}, Onsets{1.0})).has_value());
  CHECK(pathway_accuracy(Onsets{}, Onsets{}) == 0.0);
  CHECK_THROWS_AS(match_events(Onsets{1.0}, Onsets{1.0, 2.0}), ValidationError);
}

TEST_CASE("normalized event error is invariant to a shared affine map") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  for (int i = 0; i < 500; ++i) {
    const double p = u(rng), t = u(rng), lo = u(rng), hi = lo + 1.0 + std::fabs(u(rng));
    const double a = 0.25 + std::fabs(u(rng)) / 10.0, b = u(rng);
    CHECK(normalized_event_error(a * p + b, a * t + b, a * lo + b, a * hi + b) ==
          doctest::Approx(normalized_event_error(p, t, lo, hi)).epsilon(1e-9));
  }
}

TEST_CASE("chain qualification matches the adjacent swap reference") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto t = random_chain(rng, 1 + rng() % 6, 0.05);
    CHECK(chain_qualifies(t) == qualifies_oracle(t));
  }
  CHECK(chain_qualifies(Onsets{1.0, 3.0, 2.0}));
  CHECK_FALSE(chain_qualifies(Onsets{3.0, 2.0, 1.0}));
  CHECK_FALSE(chain_qualifies(Onsets{1.0, std::nullopt, 2.0}));
}

TEST_CASE("programmed chains are detected at their exact onsets") {
  const std::size_t L = 30;
  std::mt19937_64 rng(12);
  const auto p = shock();
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t a = rng() % 10, b = a + rng() % 8, c = b + rng() % 8;
    const auto truth = grid_with(L, {{"Non Invasive Blood Pressure systolic", crossing(L, a, 110, 85)},
                                     {"Lactate", crossing(L, b, 1.5, 3.0)},
                                     {"Heart Rate", crossing(L, c, 80, 120)}});
    const auto ev = detect_events(truth, p);
    CHECK(ev == Onsets{0.5 * a, 0.5 * b, 0.5 * c});
    const std::size_t shift = rng() % 4;
    const auto pred = grid_with(L, {{"Non Invasive Blood Pressure systolic", crossing(L, a + shift, 110, 85)},
                                    {"Lactate", crossing(L, b + shift, 1.5, 3.0)},
                                    {"Heart Rate", crossing(L, c + shift, 80, 120)}});
    const auto r = evaluate_pathway(pred, truth, p, {{"Cardiovascular.Heart Rate", {40.0, 160.0}}});
    CHECK(r.accuracy == 1.0);
    CHECK(*r.delta_t_h == doctest::Approx(0.5 * shift));
    CHECK(r.qualifies);
    CHECK(*r.normalized_error == 0.0);
  }
}

TEST_CASE("second fall needs a recovery in between") {
  auto def = shock();
  def.events[0].direction = EventDirection::SecondFall;
  const auto g = grid_with(10, {{"Non Invasive Blood Pressure systolic", {100, 85, 84, 95, 96, 80, 70, 90, 80, 80}},
                                {"Lactate", std::vector<double>(10, 1.0)},
                                {"Heart Rate", std::vector<double>(10, 1.0)}});
  const auto ev = detect_events(g, def);
  CHECK(ev[0] == 2.5);
  CHECK_FALSE(ev[1].has_value());
  auto unset = def;
  unset.events[1].threshold.reset();
  CHECK_THROWS_AS(detect_events(g, unset), ValidationError);
  CHECK_THROWS_AS(PathwayDefinition::from_json({{"name", "x"}, {"events", nlohmann::json::array()}}), ValidationError);
}

TEST_CASE("shipped pathway and range files load") {
  const std::string dir = ORGANSIM_CONFIG_DIR;
  const auto ps = load_pathways(dir + "/pathways.json");
  CHECK_FALSE(ps.empty());
  CHECK(load_pathways(dir + "/synthetic_pathways.json").front().thresholds_configured());
  const auto r = load_ranges(dir + "/ranges.json");
  CHECK(r.at("Cardiovascular.Non Invasive Blood Pressure systolic") == std::pair<double, double>{60.0, 160.0});
}

TEST_CASE("mse report agrees with a direct recomputation and ignores step order") {
  const auto rec = make_synthetic_patient("P", 4, 36);
  const auto run = run_simulation(rec, runfix::base_config());
  const auto truth = preprocess(rec);
  const auto rep = mse_report(run, truth);

  std::map<std::string, std::pair<long double, std::size_t>> acc;
  std::size_t scored = 0;
  for (const auto& s : run.steps) {
    if (s.skipped) continue;
    for (std::size_t k = 0; k < s.indicators.size(); ++k) {
      const auto* info = SystemTable::canonical().find_qualified(s.indicators[k]);
      const auto* ser = truth.find(info->name);
      if (!ser || !ser->available || !std::isfinite(ser->values[s.grid_index])) continue;
      const long double d = static_cast<long double>(s.final_values[k]) - ser->values[s.grid_index];
      acc[s.indicators[k]].first += d * d;
      acc[s.indicators[k]].second += 1;
      ++scored;
    }
  }
  REQUIRE(rep.per_indicator.size() == acc.size());
  long double pse = 0;
  std::size_t i = 0;
  for (const auto& [name, a] : acc) {
    const long double m = a.first / a.second;
    CHECK(rep.per_indicator[i].indicator == name);
    CHECK(oracle::rel_err(rep.per_indicator[i].mse, m) <= 1e-12);
    pse += m;
    ++i;
  }
  CHECK(oracle::rel_err(rep.pse, pse / acc.size()) <= 1e-12);
  CHECK(rep.scored == scored);

  auto shuffled = run;
  std::mt19937_64 rng(2);
  std::shuffle(shuffled.steps.begin(), shuffled.steps.end(), rng);
  const auto rep2 = mse_report(shuffled, truth);
  CHECK(rep2.to_json() == rep.to_json());

  auto short_truth = truth;
  short_truth.length = run.start_index + run.horizon - 1;
  CHECK_THROWS_AS(mse_report(run, short_truth), ValidationError);

  const auto pg = predicted_grid(run, truth);
  const auto* s = run.step(0, System::Cardiovascular);
  const auto* info = SystemTable::canonical().find_qualified(s->indicators[0]);
  CHECK(pg.find(info->name)->values[s->grid_index] == s->final_values[0]);
  CHECK(run_scr(run) == 1.0);
}

TEST_CASE("cohort report weights PSE by scored pairs and writes flat TSV") {
  std::vector<PatientRecord> recs{make_synthetic_patient("A", 1, 36), make_synthetic_patient("B", 2, 36)};
  recs[1].sofa_score.reset();
  std::vector<SimulationRun> runs;
  for (const auto& r : recs) runs.push_back(run_simulation(r, runfix::base_config()));
  std::vector<ReportInput> in{{&runs[0], &recs[0]}, {&runs[1], &recs[1]}};
  const auto ps = load_pathways(std::string(ORGANSIM_CONFIG_DIR) + "/pathways.json");
  const auto rep = cohort_report(in, ps);
  const auto& a = rep.runs[0];
  const auto& b = rep.runs[1];
  CHECK(rep.pse == doctest::Approx((a.pse * a.scored + b.pse * b.scored) / double(a.scored + b.scored)));
  CHECK(std::any_of(rep.notes.begin(), rep.notes.end(),
                    [](const auto& n) { return n.find("no SOFA") != std::string::npos; }));
  std::istringstream tsv(rep.to_tsv());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(tsv, line)) {
    CHECK(std::count(line.begin(), line.end(), '\t') == 4);
    ++lines;
  }
  CHECK(lines > 3);
  std::swap(in[0], in[1]);
  CHECK(cohort_report(in, ps).pse == doctest::Approx(rep.pse).epsilon(1e-12));
  runs[0].patient_id = "other";
  CHECK_THROWS_AS(cohort_report({{&runs[0], &recs[0]}}), ValidationError);
}

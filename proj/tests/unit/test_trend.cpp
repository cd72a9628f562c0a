#include <doctest.h>

#include <random>

#include "organsim/errors.hpp"
#include "organsim/trend.hpp"

using namespace organsim;

TEST_CASE("classification examples") {
  TrendConfig cfg;
  const std::vector<double> rr{18.0, 18.0, 18.0};
  CHECK(classify_trend(rr, cfg.delta_for("Respiratory.Respiratory Rate", rr)) == TrendType::RemainStable);
  const std::vector<double> pco2{33.0, 33.0, 31.0};
  CHECK(classify_trend(pco2, cfg.delta_for("Respiratory.pCO2", pco2)) == TrendType::Fall);
  const std::vector<double> fl{10, 11, 10, 11};
  CHECK(classify_trend(fl, cfg.delta_for("x", fl)) == TrendType::Fluctuate);
  const std::vector<double> up{100, 104, 111};
  CHECK(classify_trend(up, cfg.delta_for("x", up)) == TrendType::Rise);
  CHECK_THROWS_AS(classify_trend(std::vector<double>{1.0}, 0.1), ValidationError);
}

TEST_CASE("zero history uses the absolute floor") {
  TrendConfig cfg;
  cfg.floors["Respiratory.pH"] = 0.02;
  const std::vector<double> z{0, 0, 0};
  CHECK(cfg.delta_for("Respiratory.pH", z) == 0.02);
  CHECK(cfg.delta_for("other", z) == cfg.default_floor);
  CHECK(classify_trend(z, cfg.delta_for("other", z)) == TrendType::RemainStable);
}

TEST_CASE("relative classification is invariant to positive rescaling") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(1, 100);
  TrendConfig cfg;
  cfg.default_floor = 0.0;
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> h(2 + rng() % 6);
    for (auto& v : h) v = u(rng);
    const double k = std::ldexp(1.0, static_cast<int>(rng() % 20) - 10);  // exact scaling
    std::vector<double> hk = h;
    for (auto& v : hk) v *= k;
    CHECK(classify_trend(h, cfg.delta_for("x", h)) == classify_trend(hk, cfg.delta_for("x", hk)));
  }
}

TEST_CASE("analyzer rows list only moving indicators unless a heartbeat is due") {
  SystemWindowBlock w{System::Respiratory, 7.5, 10.0,
                      {{"pH", {7.29, 7.29, 7.29, 7.32, 7.32, 7.32}},
                       {"pCO2", {46, 46, 46, 33, 33, 31}},
                       {"Respiratory Rate", {18, 18, 22.5, 18, 18, 18.5}}}};
  AnalyzerConfig cfg;
  const auto row = analyze_window(w, cfg);
  CHECK(row.time_label == "10");
  REQUIRE(row.events.size() == 1);
  CHECK(row.events[0].indicator == "Respiratory.pCO2");
  CHECK(row.events[0].type == TrendType::Fall);
  CHECK(row.events[0].value == 31.0);
  const auto hb = analyze_window(w, cfg, true);
  CHECK(hb.events.size() == 3);
  cfg.heartbeat_h = 2.0;
  CHECK(cfg.heartbeat_due(10.0));
  CHECK_FALSE(cfg.heartbeat_due(9.5));
}

#include <doctest.h>

#include <random>

#include "organsim/compensator.hpp"
#include "organsim/errors.hpp"
#include "organsim/objectives.hpp"

using namespace organsim;

TEST_CASE("gate is a strict comparison") {
  const std::vector<double> c{0.79, 0.80, 0.81, 0.0, 1.0};
  CHECK(gate(c, 0.8) == std::vector<bool>{true, false, false, true, false});
  CHECK(gate(c, 0.0) == std::vector<bool>(5, false));
  CHECK(gate(std::vector<double>{std::nextafter(0.8, 0.0)}, 0.8) == std::vector<bool>{true});
}

TEST_CASE("raising the threshold never shrinks the gated set") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> c(1 + rng() % 10);
    for (auto& x : c) x = std::round(u(rng) * 100) / 100;
    const double t1 = std::round(u(rng) * 100) / 100, t2 = t1 + std::round(u(rng) * 50) / 100;
    const auto a = gate(c, t1), b = gate(c, t2);
    for (std::size_t k = 0; k < c.size(); ++k)
      if (a[k]) CHECK(b[k]);
  }
}

TEST_CASE("compensation is identity on nulls and exact addition elsewhere") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> pred(1 + rng() % 8);
    ResidualEstimate est(pred.size());
    for (std::size_t k = 0; k < pred.size(); ++k) {
      pred[k] = u(rng);
      if (rng() & 1u) est[k] = u(rng) * 1e-3;
    }
    const auto out = apply_compensation(pred, est);
    for (std::size_t k = 0; k < pred.size(); ++k) {
      if (est[k]) {
        const double want = pred[k] + *est[k];
        CHECK(out[k] == want);
      } else {
        CHECK(out[k] == pred[k]);
      }
    }
  }
}

TEST_CASE("residual history keeps the most recent entries, padded on the left") {
  ResidualHistory h(3);
  h.push("Respiratory.pH", 0.1);
  h.push("Respiratory.pH", std::nullopt);
  const auto blk = h.block({"Respiratory.pH", "Respiratory.pO2"});
  REQUIRE(blk.rows.size() == 2);
  CHECK(blk.rows[0].values == std::vector<std::optional<double>>{std::nullopt, 0.1, std::nullopt});
  CHECK(blk.rows[1].values == std::vector<std::optional<double>>(3, std::nullopt));
  for (double v : {0.2, 0.3, 0.4}) h.push("Respiratory.pH", v);
  CHECK(h.get("Respiratory.pH") == std::vector<std::optional<double>>{0.2, 0.3, 0.4});
  CHECK(ResidualHistory::from_json(h.to_json()) == h);
}

TEST_CASE("history estimate is the gain-scaled mean for gated indicators only") {
  ResidualHistory h(6);
  for (auto v : {std::optional<double>(1.0), std::optional<double>(), std::optional<double>(2.0)}) h.push("a", v);
  h.push("b", 5.0);
  const auto est = estimate_from_history({"a", "b", "c"}, {true, false, true}, h, 0.5);
  CHECK(est[0] == 0.75);
  CHECK_FALSE(est[1].has_value());
  CHECK(est[2] == 0.0);
}

TEST_CASE("text estimate discards ungated entries and degrades to null on bad text") {
  const std::string text =
      "    <residual>\n        Respiratory.pH: (0.02)\n        Respiratory.pO2: (1.5)\n    </residual>\n";
  const auto est = estimate_from_text(text, {"Respiratory.pH", "Respiratory.pO2"}, {false, true});
  CHECK_FALSE(est[0].has_value());
  CHECK(est[1] == 1.5);
  std::optional<Violation> v;
  const auto bad = estimate_from_text("garbage", {"Respiratory.pH"}, {true}, &v);
  CHECK_FALSE(bad[0].has_value());
  REQUIRE(v.has_value());
  CHECK(v->kind == ViolationKind::Structural);
}

TEST_CASE("gain update follows the squared-error gradient") {
  const std::vector<std::pair<double, double>> s{{1.0, 2.0}, {2.0, 3.0}, {-1.0, -1.5}};
  const auto loss = [&](double g) {
    double t = 0;
    for (auto [m, r] : s) t += (g * m - r) * (g * m - r);
    return t / static_cast<double>(s.size());
  };
  const double g0 = 0.3, lr = 0.01, h = 1e-6;
  const double fd = (loss(g0 + h) - loss(g0 - h)) / (2 * h);
  CHECK(update_gain(g0, s, lr) == doctest::Approx(g0 - lr * fd).epsilon(1e-8));
  double g = g0;
  for (int i = 0; i < 2000; ++i) g = update_gain(g, s, 0.05);
  // Least-squares optimum: sum(m r) / sum(m m) = (2 + 6 + 1.5) / 6.
  CHECK(g == doctest::Approx(9.5 / 6.0));
  CHECK(update_gain(g0, {}, lr) == g0);
}

TEST_CASE("residual losses") {
  CHECK(residual_loss(4.0, 1.0, 3.0) == 0.0);
  CHECK(residual_loss(0.0, 1.0, 3.0) == 16.0);
  CHECK(signed_residual_loss(2.0, 1.0, 3.0) == 0.0);
}

TEST_CASE("config validation") {
  CompensatorConfig c;
  CHECK_NOTHROW(c.validate());
  c.history_depth = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

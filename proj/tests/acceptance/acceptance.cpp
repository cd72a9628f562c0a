// Acceptance checks. One line per criterion; exit status is the failure count.

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "../support/figures.hpp"
#include "../support/oracles.hpp"
#include "../support/ppo_fixtures.hpp"
#include "../support/random_prompts.hpp"
#include "../support/runs.hpp"
#include "organsim/cohort_io.hpp"
#include "organsim/compensator.hpp"
#include "organsim/http_service.hpp"
#include "organsim/intervention.hpp"
#include "organsim/metrics.hpp"
#include "organsim/objectives.hpp"
#include "organsim/pathway.hpp"
#include "organsim/rollouts.hpp"

using namespace organsim;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      else detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

void grammar_fidelity(Outcome& o) {
  const auto t0 = Clock::now();
  std::size_t figures = 0;
  for (const auto& f : figs::rendered_figures()) {
    o.expect(f.rendered == figs::normalize_figure(figs::read_fixture(f.name + ".txt")), "figure " + f.name);
    ++figures;
  }
  randprompt::Gen gen(10000);
  std::size_t round_trips = 0;
  std::vector<std::string> corpus;
  for (int i = 0; i < 10000; ++i) {
    const auto p = gen.prompt();
    const auto text = render_prompt(p);
    if (parse_prompt(text) == p) ++round_trips;
    if (const auto* sim = p.get<SimulationBlock>()) corpus.push_back(render_output(*sim));
  }
  for (int i = 0; i < 1000; ++i) {
    corpus.push_back(render_output(gen.simulation(gen.window(kAllSystems[i % kSystemCount], 6))));
  }
  const double scr = structural_compliance(corpus, OutputKind::Simulation);
  const double secs = seconds_since(t0);
  o.expect(round_trips == 10000, "round trips " + std::to_string(round_trips));
  o.expect(scr == 1.0, "SCR " + std::to_string(scr));
  o.expect(secs < 30.0, "runtime " + std::to_string(secs) + " s");
  o.detail << (o.pass ? "" : " | ") << figures << " figures byte-equal, " << round_trips
           << "/10000 round trips, SCR " << scr << " over " << corpus.size() << " outputs, " << secs << " s";
}

void objective_functions(Outcome& o) {
  std::mt19937_64 rng(42);
  const auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  double worst = 0.0;
  const auto track = [&](double got, long double want) { worst = std::max(worst, oracle::rel_err(got, want)); };
  for (int i = 0; i < 1000; ++i) {
    const double p = uni(-50, 50), t = uni(-50, 50), c = uni(0, 1), lam = uni(0, 3);
    track(sft_constraint_loss(p, c, t, lam), oracle::sft_constraint_loss(p, c, t, lam));
    const double q = p + uni(-10, 10);
    track(confidence_target(p, q), oracle::confidence_target(p, q));
    const double a = uni(0, 100), b = uni(0, 100);
    track(compute_reward(a, b), oracle::compute_reward(a, b));
    const double al = uni(0.01, 0.99);
    track(ema_baseline_update(a, b, al), oracle::ema(a, b, al));
    const double lo = uni(-5, 0), ln = lo + uni(-1, 1), adv = uni(-3, 3), eps = uni(0.05, 0.5);
    track(ppo_clipped_loss(ln, lo, adv, eps), oracle::ppo_clipped_loss(ln, lo, adv, eps));
    std::vector<double> probs(1 + i % 12);
    for (auto& x : probs) x = uni(0, 1);
    track(policy_entropy(probs), oracle::policy_entropy(probs));
    const double ent = uni(0, 5), l1 = uni(0, 20), ppo = uni(-3, 3), bs = uni(0, 0.1), be = uni(0, 0.1);
    track(rl_total_loss(ppo, l1, ent, bs, be), oracle::rl_total_loss(ppo, l1, ent, bs, be));
    const double e = uni(0, 30);
    track(residual_loss(e, p, q), oracle::residual_loss(e, p, q));
  }
  double worst_grad = 0.0;
  std::mt19937_64 grng(17);
  for (int i = 0; i < 100; ++i) worst_grad = std::max(worst_grad, ppofix::max_gradient_error(ppofix::random_instance(grng)));
  o.expect(worst <= 1e-10, "objective relative error");
  o.expect(worst_grad <= 1e-4, "gradient relative error");
  o.detail << (o.pass ? "" : " | ") << "max rel err " << worst << " over 8x1000 inputs, max gradient rel err "
           << worst_grad << " over 100 instances";
}

double cohort_pse(const std::vector<PatientRecord>& recs, const OrchestratorConfig& cfg,
                  const RunServices& svc = {}) {
  double weighted = 0.0;
  std::size_t n = 0;
  for (const auto& r : recs) {
    const auto run = run_simulation(r, cfg, svc);
    const auto rep = mse_report(run, preprocess(r, cfg.preprocess));
    weighted += rep.pse * static_cast<double>(rep.scored);
    n += rep.scored;
  }
  return n ? weighted / static_cast<double>(n) : 0.0;
}

void ppo_learning(Outcome& o) {
  const auto t0 = Clock::now();
  const auto cohort = make_coupled_cohort();
  TrainConfig tc;
  tc.run = cohort.run_config();
  tc.steps = 200;
  tc.seed = 11;
  const auto result = train_correlator(cohort.records, tc);
  const double train_secs = seconds_since(t0);

  // Selection probabilities on fresh rollouts of held-out seeds.
  std::map<System, double> baselines;
  auto eval_cfg = tc.run;
  eval_cfg.seed = 999;
  const std::vector<PatientRecord> eval(cohort.records.begin(), cohort.records.begin() + 20);
  const auto transitions = collect_rollouts(eval, eval_cfg, result.params, baselines);
  double p_true = 0.0, p_decoy = 0.0;
  std::size_t n_true = 0, n_decoy = 0;
  for (const auto& t : transitions) {
    const auto z = result.params.logits(t.system, t.candidates, t.features);
    for (std::size_t c = 0; c < z.size(); ++c) {
      const double p = sigmoid(z[c]);
      if (t.candidates[c] == cohort.driver) {
        p_true += p;
        ++n_true;
      } else {
        p_decoy += p;
        ++n_decoy;
      }
    }
  }
  p_true /= static_cast<double>(std::max<std::size_t>(1, n_true));
  p_decoy /= static_cast<double>(std::max<std::size_t>(1, n_decoy));
  const double tail = result.tail_mean_reward(50);

  // Error ordering: greedy RL references against no references and a fixed decoy.
  auto rl_cfg = tc.run;
  rl_cfg.greedy = true;
  RunServices svc;
  svc.policy = std::make_shared<PolicyParams>(result.params);
  const double mse_rl = cohort_pse(eval, rl_cfg, svc);
  auto none_cfg = tc.run;
  none_cfg.mechanism = ReferenceMechanism::None;
  const double mse_none = cohort_pse(eval, none_cfg);
  auto wrong_cfg = tc.run;
  wrong_cfg.mechanism = ReferenceMechanism::RuleBased;
  wrong_cfg.rule_references[System::Respiratory] = {cohort.decoys.front()};
  const double mse_wrong = cohort_pse(eval, wrong_cfg);

  o.expect(n_true > 0, "no evaluation transitions");
  o.expect(p_true > 0.9, "p(true) " + std::to_string(p_true));
  o.expect(p_decoy < 0.2, "mean p(decoy) " + std::to_string(p_decoy));
  o.expect(tail > 0.0, "tail reward " + std::to_string(tail));
  o.expect(mse_rl < mse_none, "rl MSE not below no-reference");
  o.expect(mse_rl < mse_wrong, "rl MSE not below wrong-reference rule");
  o.expect(train_secs < 300.0, "training took " + std::to_string(train_secs) + " s");
  o.detail << (o.pass ? "" : " | ") << "p(true) " << p_true << ", mean p(decoy) " << p_decoy
           << ", final-50 reward " << tail << ", MSE rl " << mse_rl << " < none " << mse_none
           << " and wrong-rule " << mse_wrong << ", training " << train_secs << " s";
}

void compensator_identities(Outcome& o) {
  const auto g = gate(std::vector<double>{0.79, 0.80}, 0.8);
  o.expect(g == std::vector<bool>{true, false}, "gate strictness");

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  std::size_t exact = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> pred(1 + rng() % 8);
    ResidualEstimate est(pred.size());
    for (std::size_t k = 0; k < pred.size(); ++k) {
      pred[k] = u(rng);
      if (rng() & 1u) est[k] = u(rng) * 1e-3;
    }
    const auto out = apply_compensation(pred, est);
    bool ok = true;
    for (std::size_t k = 0; k < pred.size(); ++k) ok = ok && out[k] == (est[k] ? pred[k] + *est[k] : pred[k]);
    exact += ok;
  }
  o.expect(exact == 1000, "additivity");

  const auto patient = make_synthetic_patient("SYN-1", 21, 36);
  auto cfg = runfix::base_config();
  const auto gated = run_simulation(patient, cfg);
  cfg.compensator_cfg.gate_threshold = 0.0;
  const auto open = run_simulation(patient, cfg);
  bool bit_equal = open.steps.size() == gated.steps.size();
  std::size_t compensated = 0;
  for (std::size_t n = 0; bit_equal && n < open.steps.size(); ++n) {
    bit_equal = open.steps[n].final_values == open.steps[n].referenced_values &&
                open.steps[n].final_values == gated.steps[n].referenced_values;
    compensated += gated.steps[n].final_values != gated.steps[n].referenced_values;
  }
  o.expect(bit_equal, "gate 0 output differs from uncompensated output");
  o.detail << (o.pass ? "" : " | ") << "gate(0.79)=1, gate(0.80)=0; 1000/1000 additions exact; gate 0 run bit-equal to "
           << "uncompensated (" << compensated << " of " << gated.steps.size() << " steps compensated at 0.8)";
}

IndicatorGrid chain_grid(std::size_t length, const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  IndicatorGrid g;
  g.length = length;
  for (const auto& [name, values] : series) {
    IndicatorSeries s;
    const auto* info = SystemTable::canonical().find(name);
    s.indicator = name;
    s.system = info->system;
    s.values = values;
    s.observed.assign(length, true);
    s.decay.assign(length, 1.0);
    g.series.push_back(std::move(s));
  }
  return g;
}

std::vector<double> step_series(std::size_t length, std::size_t onset, double before, double after) {
  std::vector<double> v(length, before);
  for (std::size_t i = onset; i < length; ++i) v[i] = after;
  return v;
}

void pathway_metrics(Outcome& o) {
  std::mt19937_64 rng(5);
  std::size_t agree = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 7;
    std::vector<std::optional<double>> truth(n), pred(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (rng() % 10) truth[k] = 0.5 * static_cast<double>(rng() % 25);
      if (truth[k] && rng() % 8) pred[k] = std::max(0.0, *truth[k] + 0.5 * (static_cast<int>(rng() % 11) - 5));
      else if (rng() % 2) pred[k] = 0.5 * static_cast<double>(rng() % 25);
    }
    const double acc = pathway_accuracy(pred, truth, 3.0, 0.5);
    const double want = static_cast<double>(oracle::best_assignment(pred, truth, 1.5)) / static_cast<double>(n);
    agree += acc == want;
  }
  o.expect(agree == 1000, "oracle agreement " + std::to_string(agree) + "/1000");

  const auto def = PathwayDefinition::from_json(json::parse(R"({
    "name": "programmed",
    "events": [
      {"indicator": "Cardiovascular.Non Invasive Blood Pressure systolic", "direction": "fall_below", "threshold": 90},
      {"indicator": "Coagulation.Lactate", "direction": "rise_above", "threshold": 2.0},
      {"indicator": "Renal.Creatinine", "direction": "rise_above", "threshold": 1.5},
      {"indicator": "Cardiovascular.Heart Rate", "direction": "rise_above", "threshold": 100}
    ]})"));
  const std::size_t L = 40;
  std::size_t exact = 0, chains = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::array<std::size_t, 4> on{};
    on[0] = rng() % 8;
    for (std::size_t k = 1; k < 4; ++k) on[k] = on[k - 1] + rng() % 6;
    std::array<int, 4> shift{};
    for (auto& s : shift) s = static_cast<int>(rng() % 7) - 3;  // inside the 3-step grace
    // Keep predicted order consistent with the truth so every event is matchable.
    std::array<std::size_t, 4> pon{};
    for (std::size_t k = 0; k < 4; ++k) {
      const auto v = static_cast<long>(on[k]) + shift[k];
      pon[k] = static_cast<std::size_t>(std::max(0L, v));
      if (k > 0) pon[k] = std::max(pon[k], pon[k - 1]);
      pon[k] = std::min<std::size_t>(pon[k], on[k] + 3);
    }
    bool in_grace = true;
    for (std::size_t k = 0; k < 4; ++k) in_grace = in_grace && (pon[k] + 3 >= on[k]) && (pon[k] <= on[k] + 3);
    if (!in_grace) continue;
    ++chains;
    const auto make = [&](const std::array<std::size_t, 4>& at) {
      return chain_grid(L, {{"Non Invasive Blood Pressure systolic", step_series(L, at[0], 110, 80)},
                            {"Lactate", step_series(L, at[1], 1.2, 3.5)},
                            {"Creatinine", step_series(L, at[2], 0.9, 2.4)},
                            {"Heart Rate", step_series(L, at[3], 85, 118)}});
    };
    const auto r = evaluate_pathway(make(pon), make(on), def);
    double programmed = 0.0;
    for (std::size_t k = 0; k < 4; ++k) programmed += 0.5 * std::fabs(double(pon[k]) - double(on[k]));
    programmed /= 4.0;
    exact += r.accuracy == 1.0 && r.delta_t_h && *r.delta_t_h == programmed;
  }
  o.expect(exact == chains && chains > 0, "programmed chains " + std::to_string(exact) + "/" + std::to_string(chains));
  o.detail << (o.pass ? "" : " | ") << agree << "/1000 random chains equal the exhaustive oracle; " << exact << "/"
           << chains << " programmed chains with accuracy 1.0 and exact delta T";
}

void preprocessing(Outcome& o) {
  std::mt19937_64 rng(5);
  std::size_t grids = 0, mismatches = 0;
  const auto check = [&](const std::vector<bool>& mask, const std::vector<double>& vals, double tau) {
    ++grids;
    std::vector<RawObservation> obs{{"Heart Rate", 0.0, 80.0}};
    bool any = false;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) obs.push_back({"pH", 0.5 * static_cast<double>(i) + 0.1, vals[i]});
      any = any || mask[i];
    }
    const auto g = apply_masked_decay(forward_impute(resample_to_grid(obs, 0.5, mask.size())), tau);
    const auto* s = g.find("pH");
    if (!any) {
      mismatches += !(s == nullptr || !s->available);
      return;
    }
    mismatches += !(s && s->observed == mask && s->values == oracle::forward_fill(vals, mask) &&
                    s->decay == oracle::decay(mask, tau));
  };
  for (std::size_t T = 1; T <= 12; ++T) {
    std::vector<double> vals(T);
    for (std::size_t i = 0; i < T; ++i) vals[i] = 7.0 + 0.01 * static_cast<double>(i);
    for (std::uint32_t m = 0; m < (1u << T); ++m) {
      std::vector<bool> mask(T);
      for (std::size_t i = 0; i < T; ++i) mask[i] = (m >> i) & 1u;
      check(mask, vals, 4.0);
    }
  }
  for (std::size_t T = 13; T <= 64; ++T) {
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<bool> mask(T);
      std::vector<double> vals(T);
      const double density = (trial % 5 + 1) / 6.0;
      for (std::size_t i = 0; i < T; ++i) {
        mask[i] = std::uniform_real_distribution<double>(0, 1)(rng) < density;
        vals[i] = std::round(std::uniform_real_distribution<double>(7.0, 7.6)(rng) * 100) / 100;
      }
      check(mask, vals, 1.0 + trial % 7);
    }
  }
  std::size_t windows_bad = 0;
  for (std::size_t T = 0; T <= 64; ++T)
    for (std::size_t w = 1; w <= 64; ++w)
      for (std::size_t s = 1; s <= 64; ++s) windows_bad += window_count(T, w, s) != oracle::window_count(T, w, s);

  std::vector<PatientRecord> recs(300);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].patient_id = "p" + std::to_string(i);
    if (i % 13 != 0) recs[i].sofa_score = static_cast<int>(i % 25);
  }
  const auto strata = stratify_by_sofa(recs);
  std::set<const PatientRecord*> seen;
  bool partition = true;
  std::size_t total = strata.unscored.size();
  for (const auto& [st, members] : strata.groups) {
    for (const auto* r : members) {
      partition = partition && seen.insert(r).second;
      const int v = *r->sofa_score;
      partition = partition && (st == SofaStratum::Low ? v <= 2 : st == SofaStratum::Mid ? (v >= 3 && v <= 6) : v >= 7);
    }
    total += members.size();
  }
  partition = partition && total == recs.size();
  o.expect(mismatches == 0, std::to_string(mismatches) + " grid mismatches");
  o.expect(windows_bad == 0, std::to_string(windows_bad) + " window count mismatches");
  o.expect(partition, "SOFA partition");
  o.detail << (o.pass ? "" : " | ") << grids << " grids (all masks to T=12, random to T=64) match forward fill and decay; "
           << "window counts match for all T,w,s <= 64; SOFA strata partition " << recs.size() << " records";
}

void orchestrator_accounting(Outcome& o) {
  const auto patient = make_synthetic_patient("SYN-1", 21, 36);
  const auto cfg = runfix::base_config();
  const auto a = run_simulation(patient, cfg);
  const auto b = run_simulation(patient, cfg);
  o.expect(a.steps.size() == 216, "record count " + std::to_string(a.steps.size()));
  o.expect(same_records(a, b), "runs differ");

  double worst = 0.0;
  for (const auto& s : a.steps) {
    if (!s.reward_valid) {
      o.expect(false, "reward missing");
      break;
    }
    const long double m0 = runfix::scored_mse(s.baseline_values, s.truth);
    const long double m1 = runfix::scored_mse(s.referenced_values, s.truth);
    worst = std::max({worst, oracle::rel_err(s.reward.mse_baseline, m0), oracle::rel_err(s.reward.mse_referenced, m1),
                      std::fabs(static_cast<double>(s.reward.reward - (m0 - m1))) /
                          static_cast<double>(std::max(1.0L, m0 + m1))});
  }
  o.expect(worst <= 1e-12, "reward recomputation error");

  auto replay = cfg;
  const auto dir = runfix::temp_dir("acceptance-replay");
  prime_replay_with_truth(patient, replay, dir);
  replay.simulator = BackendDescriptor{"replay", {{"cache_dir", dir}}, 0};
  const auto run = run_simulation(patient, replay);
  const auto rep = mse_report(run, preprocess(patient));
  std::filesystem::remove_all(dir);
  o.expect(rep.pse == 0.0 && rep.scored > 0, "replay PSE " + std::to_string(rep.pse));
  o.detail << (o.pass ? "" : " | ") << a.steps.size() << " records bit-identical across runs; rewards recomputed to "
           << worst << "; perfect replay PSE " << rep.pse << " over " << rep.scored << " scored values";
}

void counterfactual_lineage(Outcome& o) {
  ServiceSettings st;
  st.data_dir = runfix::temp_dir("acceptance-lineage");
  st.workers = 1;
  st.run = runfix::base_config();
  Service svc(st);
  const int port = svc.serve_in_background();
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(300, 0);

  const auto patient = make_synthetic_patient("SYN-CF", 21, 36);
  std::ostringstream nd;
  write_cohort(nd, {patient});
  auto res = cli.Post("/cohorts?wait=1", nd.str(), "application/x-ndjson");
  o.expect(res && res->status == 202, "ingest");
  res = cli.Post("/runs?wait=1", R"({"patient":"SYN-CF"})", "application/json");
  if (!res || res->status != 202) {
    o.expect(false, "parent run");
    return;
  }
  const auto parent = json::parse(res->body)["result"]["run_id"].get<std::string>();
  res = cli.Post(("/runs/" + parent + "/counterfactual?wait=1").c_str(),
                 R"({"drug":"Fluid resuscitation","new_time_h":5.0})", "application/json");
  const auto child_res = json::parse(res->body)["result"];
  const auto child = child_res["run_id"].get<std::string>();
  res = cli.Post(("/runs/" + child + "/counterfactual?wait=1").c_str(), child_res["inverse_edit"].dump(),
                 "application/json");
  const auto grand = json::parse(res->body)["result"]["run_id"].get<std::string>();

  const auto pr = svc.store().load(parent), cr = svc.store().load(child), gr = svc.store().load(grand);
  o.expect(!same_records(pr, cr), "child identical to parent");
  o.expect(same_records(pr, gr), "grandchild differs from parent");

  const auto lineage = json::parse(cli.Get(("/runs/" + grand + "/lineage").c_str())->body)["lineage"];
  o.expect(lineage == json::array({grand, child, parent}), "lineage " + lineage.dump());
  const auto kids = json::parse(cli.Get(("/runs/" + parent + "/children").c_str())->body)["children"];
  o.expect(kids.size() == 1 && kids[0]["run_id"] == child, "children of parent");
  const auto kids2 = json::parse(cli.Get(("/runs/" + child + "/children").c_str())->body)["children"];
  o.expect(kids2.size() == 1 && kids2[0]["run_id"] == grand, "children of child");
  res = cli.Post(("/runs/" + parent + "/counterfactual").c_str(), R"({"drug":"Aspirin","remove":true})", "application/json");
  o.expect(res && res->status == 422, "invalid edit not rejected with 422");
  svc.stop();
  std::filesystem::remove_all(st.data_dir);
  o.detail << (o.pass ? "" : " | ") << "parent " << parent << " -> child " << child << " -> grandchild " << grand
           << "; grandchild records equal parent, child differs; API lineage and children correct";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"grammar fidelity", grammar_fidelity},
      {"objective functions", objective_functions},
      {"ppo learning (synthetic)", ppo_learning},
      {"compensator identities", compensator_identities},
      {"pathway metrics vs oracle", pathway_metrics},
      {"preprocessing", preprocessing},
      {"orchestrator determinism and accounting", orchestrator_accounting},
      {"counterfactual lineage", counterfactual_lineage},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.expect(false, std::string("exception: ") + e.what());
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << seconds_since(t0) << " s): " << o.detail.str()
              << std::endl;
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criteria failed" : "acceptance: all criteria passed")
            << std::endl;
  return failures;
}

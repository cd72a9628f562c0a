#include "organsim/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "organsim/cohort_io.hpp"
#include "organsim/errors.hpp"
#include "organsim/http_service.hpp"
#include "organsim/synthetic.hpp"

namespace organsim {

using nlohmann::json;

namespace {

std::string read_input(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  return read_file(path);
}

json json_arg(const std::string& text) {
  // Either inline JSON or @path.
  const auto src = !text.empty() && text[0] == '@' ? read_file(text.substr(1)) : text;
  try {
    return json::parse(src);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad JSON argument: ") + e.what());
  }
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"organsim: multi-agent physiological simulator"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, data_dir;
  bool as_json = false;
  app.add_option("--config", config_path, "settings file (JSON)");
  app.add_option("--data-dir", data_dir, "storage directory");
  app.add_flag("--json", as_json, "machine-readable output");

  auto* ingest = app.add_subcommand("ingest", "validate and store a cohort file (NDJSON)");
  std::string cohort_path;
  ingest->add_option("cohort", cohort_path, "cohort file or -")->required();

  auto* simulate = app.add_subcommand("simulate", "run the simulator for one patient");
  std::string patient, mode, overrides, policy_id;
  std::optional<std::size_t> horizon, start_index;
  std::optional<std::uint64_t> seed;
  simulate->add_option("--patient", patient)->required();
  simulate->add_option("--mode", mode, "teacher_forced | free_running");
  simulate->add_option("--horizon", horizon);
  simulate->add_option("--start-index", start_index);
  simulate->add_option("--seed", seed);
  simulate->add_option("--set", overrides, "config overrides as JSON or @file");
  simulate->add_option("--policy", policy_id, "stored correlator policy id");

  auto* cf = app.add_subcommand("counterfactual", "re-run a stored run with an edited treatment");
  std::string parent_run, edit_text;
  cf->add_option("--run", parent_run)->required();
  cf->add_option("--edit", edit_text, "edit as JSON or @file")->required();

  auto* train = app.add_subcommand("train-correlator", "PPO training of the correlator policy");
  std::string train_cfg, patients_csv;
  std::optional<std::size_t> steps;
  bool synthetic = false;
  train->add_option("--train-config", train_cfg, "TrainConfig as JSON or @file");
  train->add_option("--patients", patients_csv, "comma-separated stored patient ids");
  train->add_option("--steps", steps);
  train->add_flag("--synthetic-coupled", synthetic, "train on a generated coupled cohort");

  auto* report = app.add_subcommand("report", "metric bundle for stored runs");
  std::string runs_csv, report_out, format = "tsv";
  report->add_option("--runs", runs_csv)->required();
  report->add_option("--out", report_out, "output file (stdout when absent)");
  report->add_option("--format", format)->check(CLI::IsMember({"tsv", "json"}));

  auto* serve = app.add_subcommand("serve", "start the HTTP API");
  std::string host;
  std::optional<int> port;
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  auto* synth = app.add_subcommand("synth", "write a generated cohort as NDJSON");
  std::size_t synth_n = 10;
  std::uint64_t synth_seed = 1;
  std::string synth_out = "-";
  bool synth_coupled = false;
  synth->add_option("--patients", synth_n);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", synth_out);
  synth->add_flag("--coupled", synth_coupled, "coupled target/driver cohort");

  auto* grammar = app.add_subcommand("grammar", "prompt grammar tools");
  grammar->require_subcommand(1);
  auto* validate = grammar->add_subcommand("validate", "check an agent output");
  std::string out_kind = "simulation", text_path, expected_csv, target_system;
  validate->add_option("--kind", out_kind)->check(CLI::IsMember({"simulation", "summary", "reference", "residual"}));
  validate->add_option("--expected", expected_csv, "comma-separated qualified indicators");
  validate->add_option("--target", target_system, "target system for reference outputs");
  validate->add_option("file", text_path, "output text file or -")->required();
  auto* parse = grammar->add_subcommand("parse", "parse a prompt and print its blocks");
  std::string prompt_path;
  parse->add_option("file", prompt_path, "prompt text file or -")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << e.what() << '\n';
    return 1;
  }

  try {
    std::map<std::string, std::string> cli;
    if (!data_dir.empty()) cli["data_dir"] = data_dir;
    if (!host.empty()) cli["host"] = host;
    if (port) cli["port"] = std::to_string(*port);
    const auto settings =
        load_settings(config_path.empty() ? std::nullopt : std::optional<std::string>(config_path), cli);

    if (*synth) {
      std::vector<PatientRecord> recs;
      if (synth_coupled) {
        CoupledCohortConfig c;
        c.patients = synth_n;
        c.seed = synth_seed;
        recs = make_coupled_cohort(c).records;
      } else {
        recs = make_synthetic_cohort(synth_n, synth_seed);
      }
      if (synth_out == "-") {
        write_cohort(out, recs);
      } else {
        std::ofstream f(synth_out);
        if (!f) throw Error("cannot write " + synth_out);
        write_cohort(f, recs);
        out << (as_json ? json{{"written", recs.size()}, {"path", synth_out}}.dump()
                        : "wrote " + std::to_string(recs.size()) + " patients to " + synth_out)
            << '\n';
      }
      return 0;
    }

    if (*grammar) {
      if (*validate) {
        const auto text = read_input(text_path);
        const auto kind = parse_output_kind(out_kind);
        const auto expected = split_csv(expected_csv);
        std::optional<System> target;
        if (!target_system.empty()) {
          target = SystemTable::canonical().parse_system(target_system);
          if (!target) throw ValidationError("unknown system '" + target_system + "'");
        }
        const auto v = validate_output(text, *kind, expected, target);
        if (as_json) {
          json a = json::array();
          for (const auto& x : v) {
            a.push_back({{"kind", std::string(violation_kind_name(x.kind))}, {"line", x.line}, {"message", x.message}});
          }
          out << json{{"valid", v.empty()}, {"violations", a}}.dump() << '\n';
        } else {
          for (const auto& x : v) out << "line " << x.line << ": " << violation_kind_name(x.kind) << ": " << x.message << '\n';
          out << (v.empty() ? "valid" : "invalid") << '\n';
        }
        return v.empty() ? 0 : 1;
      }
      const auto p = parse_prompt(read_input(prompt_path));
      json blocks = json::array();
      for (const auto& b : p.blocks) blocks.push_back(std::string(block_tag(block_type(b))));
      out << json{{"kind", std::string(prompt_kind_name(p.kind))}, {"blocks", blocks}}.dump() << '\n';
      return 0;
    }

    Service svc(settings);

    if (*ingest) {
      const auto r = svc.ingest(read_input(cohort_path));
      if (as_json) {
        out << r.to_json().dump() << '\n';
      } else {
        out << "accepted " << r.accepted.size() << ", rejected " << r.rejected.size() << '\n';
        for (const auto& x : r.rejected) err << "line " << x.line_number << ": " << x.message << '\n';
      }
      return r.accepted.empty() && !r.rejected.empty() ? 1 : 0;
    }
    if (*simulate) {
      json req{{"patient", patient}};
      if (!mode.empty()) req["mode"] = mode;
      if (horizon) req["horizon"] = *horizon;
      if (start_index) req["start_index"] = *start_index;
      if (seed) req["seed"] = *seed;
      if (!overrides.empty()) req["config"] = json_arg(overrides);
      if (!policy_id.empty()) req["policy_id"] = policy_id;
      const auto m = svc.simulate(req);
      if (as_json) {
        out << json{{"run_id", m.run_id}, {"steps", m.step_count}, {"manifest", m.to_json()}}.dump() << '\n';
      } else {
        out << m.run_id << '\n';
      }
      return 0;
    }
    if (*cf) {
      const auto r = svc.counterfactual(parent_run, json_arg(edit_text));
      if (as_json) {
        out << json{{"run_id", r.manifest.run_id},
                    {"parent_run_id", parent_run},
                    {"inverse_edit", r.inverse_edit}}.dump()
            << '\n';
      } else {
        out << r.manifest.run_id << '\n';
      }
      return 0;
    }
    if (*train) {
      json cfg = train_cfg.empty() ? json::object() : json_arg(train_cfg);
      if (steps) cfg["steps"] = *steps;
      json res;
      if (synthetic) {
        const auto cohort = make_coupled_cohort();
        if (!cfg.contains("run")) cfg["run"] = cohort.run_config().to_json();
        const auto tc = TrainConfig::from_json(cfg);
        const auto r = train_correlator(cohort.records, tc, {}, [&](const TrainStepLog& l) {
          if (!as_json && (l.step + 1) % 20 == 0) {
            err << "step " << l.step + 1 << " mean reward " << l.mean_reward << '\n';
          }
        });
        const auto id = svc.store().put_policy(r.params, {{"config", tc.to_json()}});
        const auto probs = [&] {
          json p = json::object();
          for (const auto& [name, w] : r.params.weights.at(System::Respiratory)) p[name] = w[0];
          return p;
        }();
        res = {{"policy_id", id}, {"tail_mean_reward", r.tail_mean_reward(50)}, {"bias_weights", probs}};
      } else {
        json req{{"config", cfg}};
        if (!patients_csv.empty()) req["patients"] = split_csv(patients_csv);
        res = svc.train(req);
      }
      out << (as_json ? res.dump() : res.at("policy_id").get<std::string>()) << '\n';
      return 0;
    }
    if (*report) {
      const auto bundle = svc.report(split_csv(runs_csv));
      const auto text = format == "json" ? bundle.to_json().dump(2) + "\n" : bundle.to_tsv();
      if (report_out.empty()) {
        out << text;
      } else {
        write_file_atomic(report_out, text);
        out << (as_json ? json{{"path", report_out}, {"pse", bundle.pse}}.dump() : report_out) << '\n';
      }
      return 0;
    }
    if (*serve) {
      err << "listening on " << settings.host << ':' << settings.port << '\n';
      if (!svc.serve()) throw Error("cannot listen on " + settings.host + ":" + std::to_string(settings.port));
      return 0;
    }
  } catch (const Error& e) {
    if (as_json) {
      out << json{{"error", e.what()}, {"exit_code", e.exit_code()}}.dump() << '\n';
    }
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace organsim

#include "organsim/http_service.hpp"

#include <httplib.h>

#include <sstream>

#include "organsim/cohort_io.hpp"
#include "organsim/errors.hpp"
#include "organsim/hashing.hpp"
#include "organsim/intervention.hpp"

namespace organsim {

using nlohmann::json;

struct Service::Server {
  httplib::Server http;
  std::thread thread;
};

namespace {

HttpResponse json_response(int status, const json& body) {
  return {status, "application/json", body.dump()};
}

HttpResponse error_response(int status, std::string_view kind, std::string_view message) {
  return json_response(status, {{"error", kind}, {"message", message}});
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

json parse_body(const std::string& body) {
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed JSON body: ") + e.what());
  }
}

std::size_t query_size(const HttpRequest& req, const std::string& key, std::size_t def) {
  const auto it = req.query.find(key);
  if (it == req.query.end()) return def;
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw ValidationError("query parameter " + key + " must be a non-negative integer");
  }
}

bool wants_wait(const HttpRequest& req) {
  const auto it = req.query.find("wait");
  return it != req.query.end() && (it->second == "1" || it->second == "true");
}

}  // namespace

json IngestResult::to_json() const {
  json rej = json::array();
  for (const auto& r : rejected) rej.push_back({{"line", r.line_number}, {"message", r.message}});
  return {{"accepted", accepted}, {"rejected", rej}};
}

Service::Service(ServiceSettings settings)
    : settings_(std::move(settings)), store_(settings_.data_dir), jobs_(settings_.workers) {
  settings_.run.validate();
  if (!settings_.pathways_path.empty()) pathways_ = load_pathways(settings_.pathways_path);
  if (!settings_.ranges_path.empty()) ranges_ = load_ranges(settings_.ranges_path);
}

Service::~Service() {
  stop();
  jobs_.shutdown();
}

IngestResult Service::ingest(std::string_view text) {
  CohortLoad load;
  bool wrapped = false;
  try {
    const auto j = json::parse(text);
    if (j.is_object() && j.contains("patients")) {
      wrapped = true;
      std::size_t n = 0;
      for (const auto& p : j.at("patients")) {
        ++n;
        try {
          load.records.push_back(record_from_json(p));
        } catch (const std::exception& e) {
          load.rejected.push_back({n, e.what()});
        }
      }
    }
  } catch (const json::exception&) {
  }
  if (!wrapped) {
    std::istringstream in{std::string(text)};
    load = read_cohort(in);
  }
  IngestResult r;
  r.rejected = std::move(load.rejected);
  for (const auto& rec : load.records) {
    store_.put_patient(rec);
    r.accepted.push_back(rec.patient_id);
  }
  return r;
}

RunManifest Service::simulate(const json& request) {
  static const std::vector<std::string> keys{"patient", "mode", "horizon", "seed", "start_index",
                                             "config", "policy_id"};
  if (!request.is_object()) throw ValidationError("run request must be an object");
  for (const auto& [k, v] : request.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ValidationError("run request: unknown key '" + k + "'");
    }
  }
  if (!request.contains("patient")) throw ValidationError("run request needs 'patient'");
  const auto record = store_.get_patient(request.at("patient").get<std::string>());
  json overrides = request.value("config", json::object());
  try {
    if (request.contains("mode")) overrides["mode"] = request.at("mode");
    if (request.contains("horizon")) overrides["horizon"] = request.at("horizon");
    if (request.contains("seed")) overrides["seed"] = request.at("seed");
    if (request.contains("start_index")) overrides["start_index"] = request.at("start_index");
    if (request.contains("policy_id")) {
      overrides["policy_path"] = store_.policy_path(request.at("policy_id").get<std::string>());
      if (!overrides.contains("mechanism")) overrides["mechanism"] = "rl";
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("run request: ") + e.what());
  }
  const auto cfg = apply_overrides(settings_.run, overrides);
  auto run = run_simulation(record, cfg);
  return store_.persist(run);
}

PatientRecord Service::record_for_run(const std::string& run_id) const {
  auto chain = store_.lineage(run_id);
  const auto root = store_.manifest(chain.back());
  auto record = store_.get_patient(root.patient_id);
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    const auto m = store_.manifest(*it);
    if (!m.edit.is_null()) record = apply_intervention_edit(record, edit_from_json(m.edit));
  }
  return record;
}

CounterfactualResult Service::counterfactual(const std::string& parent_run_id, const json& edit_json) {
  const auto parent = store_.manifest(parent_run_id);
  const auto before = record_for_run(parent_run_id);
  const auto edit = edit_from_json(edit_json);
  const auto after = apply_intervention_edit(before, edit);
  const auto cfg = OrchestratorConfig::from_json(parent.config);
  auto run = run_simulation(after, cfg);
  run.parent_run_id = parent_run_id;
  CounterfactualResult r;
  r.manifest = store_.persist(run, edit_to_json(edit));
  r.inverse_edit = edit_to_json(inverse_edit(before, edit));
  return r;
}

json Service::train(const json& request, const JobQueue::Progress& progress) {
  if (!request.is_object()) throw ValidationError("train request must be an object");
  for (const auto& [k, v] : request.items()) {
    if (k != "config" && k != "patients") throw ValidationError("train request: unknown key '" + k + "'");
  }
  TrainConfig cfg;
  if (request.contains("config")) {
    auto c = request.at("config");
    if (!c.contains("run")) c["run"] = settings_.run.to_json();
    cfg = TrainConfig::from_json(c);
  } else {
    cfg.run = settings_.run;
  }
  std::vector<std::string> ids = request.contains("patients")
                                     ? request.at("patients").get<std::vector<std::string>>()
                                     : store_.patient_ids();
  std::vector<PatientRecord> cohort;
  for (const auto& id : ids) cohort.push_back(store_.get_patient(id));
  const auto result = train_correlator(cohort, cfg, {}, [&](const TrainStepLog& l) {
    if (progress) progress(static_cast<double>(l.step + 1) / static_cast<double>(cfg.steps));
  });
  json log = json::array();
  for (const auto& l : result.log) {
    log.push_back({{"step", l.step}, {"mean_reward", l.mean_reward}, {"transitions", l.transitions}});
  }
  const auto id = store_.put_policy(result.params, {{"config", cfg.to_json()}, {"log", log}});
  return {{"policy_id", id}, {"tail_mean_reward", result.tail_mean_reward(50)}, {"steps", cfg.steps}};
}

CohortReport Service::report(const std::vector<std::string>& run_ids) {
  if (run_ids.empty()) throw ValidationError("report needs at least one run id");
  std::vector<SimulationRun> runs;
  std::vector<PatientRecord> records;
  runs.reserve(run_ids.size());
  records.reserve(run_ids.size());
  for (const auto& id : run_ids) {
    runs.push_back(store_.load(id));
    records.push_back(record_for_run(id));
  }
  std::vector<ReportInput> inputs;
  for (std::size_t i = 0; i < runs.size(); ++i) inputs.push_back({&runs[i], &records[i]});
  return cohort_report(inputs, pathways_, ranges_);
}

HttpResponse Service::handle(const HttpRequest& req) {
  std::string idem_key;
  if (req.method == "POST") {
    const auto it = req.headers.find("idempotency-key");
    if (it != req.headers.end()) {
      idem_key = req.method + " " + req.path + " " + it->second;
      const auto body_hash = sha256_hex(req.body);
      std::lock_guard lock(idem_mu_);
      const auto hit = idempotent_.find(idem_key);
      if (hit != idempotent_.end()) {
        if (hit->second.first != body_hash) {
          return error_response(409, "IdempotencyConflict",
                                "idempotency key reused with a different body");
        }
        return hit->second.second;
      }
    }
  }
  HttpResponse resp;
  try {
    resp = route(req);
  } catch (const EditRejected& e) {
    resp = error_response(422, "EditRejected", e.what());
  } catch (const NotFound& e) {
    resp = error_response(404, "NotFound", e.what());
  } catch (const ValidationError& e) {
    resp = error_response(400, "ValidationError", e.what());
  } catch (const CorruptRun& e) {
    resp = error_response(500, "CorruptRun", e.what());
  } catch (const std::exception& e) {
    resp = error_response(500, "Error", e.what());
  }
  if (!idem_key.empty() && resp.status < 500) {
    std::lock_guard lock(idem_mu_);
    idempotent_.emplace(idem_key, std::make_pair(sha256_hex(req.body), resp));
  }
  return resp;
}

HttpResponse Service::route(const HttpRequest& req) {
  const auto seg = split_path(req.path);
  const bool get = req.method == "GET";
  const bool post = req.method == "POST";
  const auto job_reply = [&](const std::string& job_id) {
    const auto d = wants_wait(req) ? jobs_.wait(job_id) : *jobs_.get(job_id);
    return json_response(202, d.to_json());
  };

  if (seg.size() == 1 && seg[0] == "health" && get) return json_response(200, {{"status", "ok"}});

  if (seg.size() == 1 && seg[0] == "cohorts" && post) {
    const auto body = req.body;
    return job_reply(jobs_.submit("ingest", [this, body](const JobQueue::Progress&) {
      const auto r = ingest(body);
      return JobOutcome{"/patients", r.to_json()};
    }));
  }
  if (seg.size() == 1 && seg[0] == "patients" && get) {
    return json_response(200, {{"patients", store_.patient_ids()}});
  }
  if (seg.size() == 2 && seg[0] == "patients" && get) {
    return json_response(200, to_json(store_.get_patient(seg[1])));
  }
  if (seg.size() == 2 && seg[0] == "jobs" && get) {
    const auto d = jobs_.get(seg[1]);
    if (!d) throw NotFound("unknown job " + seg[1]);
    return json_response(200, d->to_json());
  }
  if (seg.size() == 1 && seg[0] == "runs" && post) {
    const auto request = parse_body(req.body);
    if (!request.contains("patient")) throw ValidationError("run request needs 'patient'");
    store_.get_patient(request.at("patient").get<std::string>());  // 404 before queueing
    return job_reply(jobs_.submit("simulate", [this, request](const JobQueue::Progress&) {
      const auto m = simulate(request);
      return JobOutcome{"/runs/" + m.run_id, m.to_json()};
    }));
  }
  if (seg.size() == 1 && seg[0] == "runs" && get) {
    json out = json::array();
    for (const auto& m : store_.list()) out.push_back(m.to_json());
    return json_response(200, {{"runs", out}});
  }
  if (seg.size() >= 2 && seg[0] == "runs") {
    const auto& id = seg[1];
    if (seg.size() == 2 && get) {
      const auto run = store_.load(id);
      const auto offset = query_size(req, "offset", 0);
      const auto limit = query_size(req, "limit", 100);
      json steps = json::array();
      for (std::size_t i = offset; i < run.steps.size() && i < offset + limit; ++i) {
        steps.push_back(run.steps[i].to_json());
      }
      return json_response(200, {{"manifest", store_.manifest(id).to_json()},
                                 {"offset", offset},
                                 {"limit", limit},
                                 {"total", run.steps.size()},
                                 {"steps", steps}});
    }
    if (seg.size() == 4 && seg[2] == "steps" && get) {
      const auto run = store_.load(id);
      std::size_t t = 0;
      try {
        t = static_cast<std::size_t>(std::stoull(seg[3]));
      } catch (const std::exception&) {
        throw ValidationError("step index must be a non-negative integer");
      }
      json steps = json::array();
      const auto sys_it = req.query.find("system");
      for (const auto* s : run.steps_at(t)) {
        if (sys_it != req.query.end() && system_name(s->system) != sys_it->second) continue;
        steps.push_back(s->to_json());
      }
      if (steps.empty()) throw NotFound("run " + id + " has no step " + seg[3]);
      return json_response(200, {{"run_id", id}, {"t_index", t}, {"steps", steps}});
    }
    if (seg.size() == 3 && seg[2] == "children" && get) {
      json out = json::array();
      for (const auto& m : store_.children(id)) out.push_back(m.to_json());
      return json_response(200, {{"run_id", id}, {"children", out}});
    }
    if (seg.size() == 3 && seg[2] == "lineage" && get) {
      return json_response(200, {{"run_id", id}, {"lineage", store_.lineage(id)}});
    }
    if (seg.size() == 3 && seg[2] == "counterfactual" && post) {
      const auto edit = parse_body(req.body);
      // Reject bad edits synchronously so the client sees a 422.
      apply_intervention_edit(record_for_run(id), edit_from_json(edit));
      return job_reply(jobs_.submit("counterfactual", [this, id, edit](const JobQueue::Progress&) {
        const auto r = counterfactual(id, edit);
        json res = r.manifest.to_json();
        res["inverse_edit"] = r.inverse_edit;
        return JobOutcome{"/runs/" + r.manifest.run_id, res};
      }));
    }
  }
  if (seg.size() == 2 && seg[0] == "policies" && seg[1] == "train" && post) {
    const auto request = parse_body(req.body);
    return job_reply(jobs_.submit("train", [this, request](const JobQueue::Progress& p) {
      const auto r = train(request, p);
      return JobOutcome{"/policies/" + r.at("policy_id").get<std::string>(), r};
    }));
  }
  if (seg.size() == 2 && seg[0] == "policies" && get) {
    return json_response(200, store_.get_policy(seg[1]).to_json());
  }
  if (seg.size() == 1 && seg[0] == "reports" && get) {
    const auto it = req.query.find("runs");
    if (it == req.query.end()) throw ValidationError("reports needs ?runs=id1,id2");
    std::vector<std::string> ids;
    std::stringstream ss(it->second);
    for (std::string id; std::getline(ss, id, ',');) {
      if (!id.empty()) ids.push_back(id);
    }
    const auto bundle = report(ids);
    const auto fmt = req.query.find("format");
    if (fmt != req.query.end() && fmt->second == "tsv") {
      return {200, "text/tab-separated-values", bundle.to_tsv()};
    }
    return json_response(200, bundle.to_json());
  }
  return error_response(404, "NotFound", "no route for " + req.method + " " + req.path);
}

namespace {

void install_routes(httplib::Server& http, Service& svc) {
  const auto bridge = [&svc](const httplib::Request& in, httplib::Response& out) {
    HttpRequest req;
    req.method = in.method;
    req.path = in.path;
    for (const auto& [k, v] : in.params) req.query[k] = v;
    for (const auto& [k, v] : in.headers) {
      std::string lk = k;
      for (auto& c : lk) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      req.headers[lk] = v;
    }
    req.body = in.body;
    const auto resp = svc.handle(req);
    out.status = resp.status;
    out.set_content(resp.body, resp.content_type.c_str());
  };
  http.Get(".*", bridge);
  http.Post(".*", bridge);
}

}  // namespace

bool Service::serve() {
  server_ = std::make_unique<Server>();
  install_routes(server_->http, *this);
  return server_->http.listen(settings_.host, settings_.port);
}

int Service::serve_in_background() {
  server_ = std::make_unique<Server>();
  install_routes(server_->http, *this);
  const int port = server_->http.bind_to_any_port(settings_.host);
  if (port <= 0) throw Error("cannot bind " + settings_.host);
  server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
  server_->http.wait_until_ready();
  return port;
}

void Service::stop() {
  if (!server_) return;
  server_->http.stop();
  if (server_->thread.joinable()) server_->thread.join();
  server_.reset();
}

}  // namespace organsim

#pragma once

// The service behind the HTTP API and the CLI. Requests are handled by
// `Service::handle`, which does not depend on the transport; `serve` binds it
// to an HTTP listener.

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "organsim/cohort_io.hpp"
#include "organsim/config.hpp"
#include "organsim/jobs.hpp"
#include "organsim/report.hpp"
#include "organsim/rollouts.hpp"
#include "organsim/run_store.hpp"

namespace organsim {

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lower-case names
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

struct IngestResult {
  std::vector<std::string> accepted;
  std::vector<RejectedLine> rejected;
  nlohmann::json to_json() const;
};

struct CounterfactualResult {
  RunManifest manifest;
  nlohmann::json inverse_edit;
};

class Service {
 public:
  explicit Service(ServiceSettings settings);
  ~Service();

  HttpResponse handle(const HttpRequest& req);

  IngestResult ingest(std::string_view text);
  // Body fields: patient, mode, horizon, seed, start_index, config (overrides), policy_id.
  RunManifest simulate(const nlohmann::json& request);
  CounterfactualResult counterfactual(const std::string& parent_run_id, const nlohmann::json& edit);
  // Body fields: config (TrainConfig), patients (ids, default all stored).
  nlohmann::json train(const nlohmann::json& request, const JobQueue::Progress& progress = {});
  CohortReport report(const std::vector<std::string>& run_ids);

  // The patient record a run was simulated on: the stored record with the
  // edits of every counterfactual ancestor applied in order.
  PatientRecord record_for_run(const std::string& run_id) const;

  RunStore& store() noexcept { return store_; }
  JobQueue& jobs() noexcept { return jobs_; }
  const ServiceSettings& settings() const noexcept { return settings_; }

  // Blocks until stop(). Returns false when the port cannot be bound.
  bool serve();
  // Binds an ephemeral port and serves in a background thread; returns the port.
  int serve_in_background();
  void stop();

 private:
  HttpResponse route(const HttpRequest& req);
  struct Server;

  ServiceSettings settings_;
  RunStore store_;
  JobQueue jobs_;
  std::vector<PathwayDefinition> pathways_;
  RangeTable ranges_;
  std::mutex idem_mu_;
  std::map<std::string, std::pair<std::string, HttpResponse>> idempotent_;  // key -> (body hash, response)
  std::unique_ptr<Server> server_;
};

}  // namespace organsim

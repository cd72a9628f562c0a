#pragma once

// File-backed storage for patients, runs and policies.
//
//   <root>/patients/<id>.json
//   <root>/runs/<run_id>/steps.ndjson   one SimulationStep per line
//   <root>/runs/<run_id>/manifest.json  written last, atomically
//   <root>/policies/<id>.json
//
// A run without a manifest does not exist as far as readers are concerned.

#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "organsim/orchestrator.hpp"

namespace organsim {

struct RunManifest {
  std::string run_id;
  std::string patient_id;
  std::string config_digest;
  nlohmann::json config;
  std::uint64_t seed = 0;
  RunMode mode = RunMode::TeacherForced;
  std::string created_at;  // UTC, ISO 8601
  std::optional<std::string> parent_run_id;
  nlohmann::json edit;  // intervention that produced a counterfactual child
  std::vector<std::string> provenance;
  std::size_t start_index = 0;
  std::size_t horizon = 0;
  std::size_t step_count = 0;
  std::string steps_digest;  // sha256 of steps.ndjson

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

class RunStore {
 public:
  explicit RunStore(std::string root);

  const std::string& root() const noexcept { return root_; }

  // Assigns run.run_id when empty. Counterfactual runs must carry a parent
  // that is already stored.
  RunManifest persist(SimulationRun& run, const nlohmann::json& edit = nullptr);
  SimulationRun load(const std::string& run_id) const;  // NotFound, CorruptRun
  RunManifest manifest(const std::string& run_id) const;
  bool exists(const std::string& run_id) const;
  std::vector<RunManifest> list() const;
  std::vector<RunManifest> children(const std::string& run_id) const;
  // run_id, its parent, ..., the root run.
  std::vector<std::string> lineage(const std::string& run_id) const;

  void put_patient(const PatientRecord& record);
  PatientRecord get_patient(const std::string& patient_id) const;  // NotFound
  std::vector<std::string> patient_ids() const;

  std::string put_policy(const PolicyParams& params, const nlohmann::json& info = nullptr);
  PolicyParams get_policy(const std::string& policy_id) const;
  std::string policy_path(const std::string& policy_id) const;

 private:
  std::string run_dir(const std::string& run_id) const;
  std::string root_;
  mutable std::mutex mu_;
};

// Writes `data` to `path` through a temporary file and rename.
void write_file_atomic(const std::string& path, const std::string& data);
std::string read_file(const std::string& path);  // NotFound
// Ids are restricted to [A-Za-z0-9._-] so they are safe as file names.
bool valid_id(const std::string& id);

}  // namespace organsim

#include "organsim/run_store.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "organsim/cohort_io.hpp"
#include "organsim/errors.hpp"
#include "organsim/hashing.hpp"

namespace organsim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fresh_id(const std::string& prefix, const std::string& salt) {
  static std::atomic<std::uint64_t> counter{0};
  const auto now = std::chrono::steady_clock::now().time_since_epoch().count();
  const auto h = sha256_hex(salt + "|" + std::to_string(now) + "|" + std::to_string(counter++));
  return prefix + h.substr(0, 12);
}

void require_id(const std::string& id, const char* what) {
  if (!valid_id(id)) throw ValidationError(std::string("invalid ") + what + " id '" + id + "'");
}

}  // namespace

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 128 || id == "." || id == "..") return false;
  for (char c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  }
  return true;
}

void write_file_atomic(const std::string& path, const std::string& data) {
  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << data;
    out.flush();
    if (!out) throw Error("short write to " + tmp);
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("no such file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json RunManifest::to_json() const {
  return {{"run_id", run_id},
          {"patient_id", patient_id},
          {"config_digest", config_digest},
          {"config", config},
          {"seed", seed},
          {"mode", std::string(run_mode_name(mode))},
          {"created_at", created_at},
          {"parent_run_id", parent_run_id ? json(*parent_run_id) : json(nullptr)},
          {"edit", edit},
          {"provenance", provenance},
          {"start_index", start_index},
          {"horizon", horizon},
          {"step_count", step_count},
          {"steps_digest", steps_digest}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    m.run_id = j.at("run_id").get<std::string>();
    m.patient_id = j.at("patient_id").get<std::string>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.mode = parse_run_mode(j.at("mode").get<std::string>());
    m.created_at = j.at("created_at").get<std::string>();
    if (!j.at("parent_run_id").is_null()) m.parent_run_id = j.at("parent_run_id").get<std::string>();
    m.edit = j.value("edit", json(nullptr));
    m.provenance = j.value("provenance", std::vector<std::string>{});
    m.start_index = j.at("start_index").get<std::size_t>();
    m.horizon = j.at("horizon").get<std::size_t>();
    m.step_count = j.at("step_count").get<std::size_t>();
    m.steps_digest = j.at("steps_digest").get<std::string>();
  } catch (const json::exception& e) {
    throw CorruptRun(std::string("manifest: ") + e.what());
  }
  return m;
}

RunStore::RunStore(std::string root) : root_(std::move(root)) {
  for (const char* sub : {"runs", "patients", "policies"}) fs::create_directories(fs::path(root_) / sub);
}

std::string RunStore::run_dir(const std::string& run_id) const {
  return (fs::path(root_) / "runs" / run_id).string();
}

RunManifest RunStore::persist(SimulationRun& run, const json& edit) {
  if (run.parent_run_id) {
    require_id(*run.parent_run_id, "parent run");
    if (!exists(*run.parent_run_id)) {
      throw ValidationError("parent run " + *run.parent_run_id + " is not stored");
    }
  }
  if (run.run_id.empty()) {
    run.run_id = fresh_id("run-", run.patient_id + run.config.digest() + std::to_string(run.seed));
  }
  require_id(run.run_id, "run");
  const auto dir = run_dir(run.run_id);
  {
    std::lock_guard lock(mu_);
    if (fs::exists(fs::path(dir) / "manifest.json")) {
      throw ValidationError("run " + run.run_id + " already exists");
    }
    fs::create_directories(dir);
  }
  std::string body;
  for (const auto& s : run.steps) {
    body += s.to_json().dump();
    body += '\n';
  }
  write_file_atomic((fs::path(dir) / "steps.ndjson").string(), body);

  RunManifest m;
  m.run_id = run.run_id;
  m.patient_id = run.patient_id;
  m.config = run.config.to_json();
  m.config_digest = run.config.digest();
  m.seed = run.seed;
  m.mode = run.mode;
  m.created_at = utc_now();
  m.parent_run_id = run.parent_run_id;
  m.edit = edit;
  m.provenance = run.provenance;
  m.start_index = run.start_index;
  m.horizon = run.horizon;
  m.step_count = run.steps.size();
  m.steps_digest = sha256_hex(body);
  write_file_atomic((fs::path(dir) / "manifest.json").string(), m.to_json().dump(2));
  return m;
}

bool RunStore::exists(const std::string& run_id) const {
  return valid_id(run_id) && fs::exists(fs::path(run_dir(run_id)) / "manifest.json");
}

RunManifest RunStore::manifest(const std::string& run_id) const {
  require_id(run_id, "run");
  const auto path = (fs::path(run_dir(run_id)) / "manifest.json").string();
  if (!fs::exists(path)) throw NotFound("unknown run " + run_id);
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw CorruptRun("run " + run_id + ": unreadable manifest");
  }
  return RunManifest::from_json(j);
}

SimulationRun RunStore::load(const std::string& run_id) const {
  const auto m = manifest(run_id);
  const auto path = (fs::path(run_dir(run_id)) / "steps.ndjson").string();
  if (!fs::exists(path)) throw CorruptRun("run " + run_id + ": step file missing");
  const auto body = read_file(path);
  if (sha256_hex(body) != m.steps_digest) throw CorruptRun("run " + run_id + ": step file digest mismatch");

  SimulationRun run;
  run.run_id = m.run_id;
  run.patient_id = m.patient_id;
  run.mode = m.mode;
  run.seed = m.seed;
  run.parent_run_id = m.parent_run_id;
  run.provenance = m.provenance;
  run.start_index = m.start_index;
  run.horizon = m.horizon;
  try {
    run.config = OrchestratorConfig::from_json(m.config);
    std::istringstream in(body);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) run.steps.push_back(SimulationStep::from_json(json::parse(line)));
    }
  } catch (const std::exception& e) {
    throw CorruptRun("run " + run_id + ": " + e.what());
  }
  if (run.config.digest() != m.config_digest) throw CorruptRun("run " + run_id + ": config digest mismatch");
  if (run.steps.size() != m.step_count) throw CorruptRun("run " + run_id + ": step count mismatch");
  return run;
}

std::vector<RunManifest> RunStore::list() const {
  std::vector<RunManifest> out;
  for (const auto& e : fs::directory_iterator(fs::path(root_) / "runs")) {
    const auto id = e.path().filename().string();
    if (!exists(id)) continue;
    out.push_back(manifest(id));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.created_at != b.created_at ? a.created_at < b.created_at : a.run_id < b.run_id;
  });
  return out;
}

std::vector<RunManifest> RunStore::children(const std::string& run_id) const {
  if (!exists(run_id)) throw NotFound("unknown run " + run_id);
  std::vector<RunManifest> out;
  for (auto& m : list()) {
    if (m.parent_run_id && *m.parent_run_id == run_id) out.push_back(std::move(m));
  }
  return out;
}

std::vector<std::string> RunStore::lineage(const std::string& run_id) const {
  std::vector<std::string> out;
  std::optional<std::string> cur = run_id;
  while (cur) {
    if (std::find(out.begin(), out.end(), *cur) != out.end()) {
      throw CorruptRun("lineage cycle through " + *cur);
    }
    out.push_back(*cur);
    cur = manifest(*cur).parent_run_id;
  }
  return out;
}

void RunStore::put_patient(const PatientRecord& record) {
  require_id(record.patient_id, "patient");
  validate_record(record);
  write_file_atomic((fs::path(root_) / "patients" / (record.patient_id + ".json")).string(),
                    to_json(record).dump());
}

PatientRecord RunStore::get_patient(const std::string& patient_id) const {
  if (!valid_id(patient_id)) throw NotFound("unknown patient " + patient_id);
  const auto path = fs::path(root_) / "patients" / (patient_id + ".json");
  if (!fs::exists(path)) throw NotFound("unknown patient " + patient_id);
  return record_from_json(json::parse(read_file(path.string())));
}

std::vector<std::string> RunStore::patient_ids() const {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(fs::path(root_) / "patients")) {
    if (e.path().extension() == ".json") out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string RunStore::put_policy(const PolicyParams& params, const json& info) {
  const auto id = fresh_id("policy-", params.to_json().dump());
  json j = params.to_json();
  const auto path = policy_path(id);
  write_file_atomic(path, j.dump(2));
  if (!info.is_null()) {
    write_file_atomic((fs::path(root_) / "policies" / (id + ".info.json")).string(), info.dump(2));
  }
  return id;
}

std::string RunStore::policy_path(const std::string& policy_id) const {
  require_id(policy_id, "policy");
  return (fs::path(root_) / "policies" / (policy_id + ".json")).string();
}

PolicyParams RunStore::get_policy(const std::string& policy_id) const {
  const auto path = policy_path(policy_id);
  if (!fs::exists(path)) throw NotFound("unknown policy " + policy_id);
  return PolicyParams::load(path);
}

}  // namespace organsim

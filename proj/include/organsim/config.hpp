#pragma once

// Layered settings: command line over environment over config file over
// built-in defaults.

#include <functional>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "organsim/orchestrator.hpp"

namespace organsim {

struct ServiceSettings {
  std::string data_dir = "organsim-data";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t workers = 2;
  std::string pathways_path;  // empty = no pathway metrics
  std::string ranges_path;
  OrchestratorConfig run;  // defaults for new runs

  nlohmann::json to_json() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

// Keys understood in every layer: data_dir, host, port, workers, pathways,
// ranges (file paths in a config file are relative to it). Environment names are ORGANSIM_<KEY upper-case>; ORGANSIM_CONFIG
// names the file when `config_path` is empty. The file may also carry a
// "run" object with orchestrator settings.
ServiceSettings load_settings(const std::optional<std::string>& config_path,
                              const std::map<std::string, std::string>& cli,
                              const EnvLookup& env = process_env());

// RFC 7386 merge of `overrides` into the config, then strict re-validation.
OrchestratorConfig apply_overrides(const OrchestratorConfig& base, const nlohmann::json& overrides);

nlohmann::json read_json_file(const std::string& path);  // ValidationError

}  // namespace organsim

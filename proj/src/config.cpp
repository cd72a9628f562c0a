#include "organsim/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "organsim/errors.hpp"

namespace organsim {

using nlohmann::json;

namespace {

const char* const kKeys[] = {"data_dir", "host", "port", "workers", "pathways", "ranges"};

void set_key(ServiceSettings& s, const std::string& key, const std::string& value,
             const std::string& source) {
  try {
    if (key == "data_dir") {
      s.data_dir = value;
    } else if (key == "host") {
      s.host = value;
    } else if (key == "port") {
      const int p = std::stoi(value);
      if (p < 0 || p > 65535) throw std::out_of_range("port");
      s.port = p;
    } else if (key == "workers") {
      const long w = std::stol(value);
      if (w < 1) throw std::out_of_range("workers");
      s.workers = static_cast<std::size_t>(w);
    } else if (key == "pathways") {
      s.pathways_path = value;
    } else if (key == "ranges") {
      s.ranges_path = value;
    } else {
      throw ValidationError(source + ": unknown setting '" + key + "'");
    }
  } catch (const std::logic_error&) {
    throw ValidationError(source + ": bad value '" + value + "' for " + key);
  }
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

json ServiceSettings::to_json() const {
  return {{"data_dir", data_dir}, {"host", host},         {"port", port},
          {"workers", workers},   {"pathways", pathways_path}, {"ranges", ranges_path},
          {"run", run.to_json()}};
}

ServiceSettings load_settings(const std::optional<std::string>& config_path,
                              const std::map<std::string, std::string>& cli, const EnvLookup& env) {
  ServiceSettings s;
  std::optional<std::string> path = config_path;
  if (!path) path = env("ORGANSIM_CONFIG");
  if (path && !path->empty()) {
    const auto j = read_json_file(*path);
    if (!j.is_object()) throw ValidationError(*path + ": top level must be an object");
    for (const auto& [k, v] : j.items()) {
      if (k == "run") {
        s.run = OrchestratorConfig::from_json(v);
      } else {
        auto value = v.is_string() ? v.get<std::string>() : v.dump();
        // File references inside a config file are relative to that file.
        if ((k == "pathways" || k == "ranges") && !value.empty() &&
            std::filesystem::path(value).is_relative()) {
          value = (std::filesystem::path(*path).parent_path() / value).lexically_normal().string();
        }
        set_key(s, k, value, *path);
      }
    }
  }
  for (const char* k : kKeys) {
    if (const auto v = env("ORGANSIM_" + upper(k))) set_key(s, k, *v, "environment");
  }
  for (const auto& [k, v] : cli) set_key(s, k, v, "command line");
  return s;
}

OrchestratorConfig apply_overrides(const OrchestratorConfig& base, const json& overrides) {
  if (overrides.is_null()) return base;
  if (!overrides.is_object()) throw ValidationError("config overrides must be an object");
  auto j = base.to_json();
  j.merge_patch(overrides);
  return OrchestratorConfig::from_json(j);
}

}  // namespace organsim

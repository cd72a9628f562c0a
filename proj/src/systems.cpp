#include "organsim/systems.hpp"

#include <json.hpp>

#include "organsim/errors.hpp"

namespace organsim {

using nlohmann::json;

SystemTable SystemTable::from_json(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("system table: ") + e.what());
  }
  SystemTable table;
  table.version_ = doc.value("version", "unversioned");
  table.default_decimals_ = doc.value("default_decimals", 2);
  const auto& systems = doc.at("systems");
  if (!systems.is_array() || systems.size() != kSystemCount) {
    throw ValidationError("system table: expected exactly nine systems");
  }
  for (std::size_t s = 0; s < kSystemCount; ++s) {
    const auto& entry = systems[s];
    const System sys = kAllSystems[s];
    table.names_[s] = entry.at("name").get<std::string>();
    for (const auto& ind : entry.at("indicators")) {
      IndicatorInfo info;
      info.name = ind.at("name").get<std::string>();
      info.qualified = table.names_[s] + "." + info.name;
      info.system = sys;
      info.decimals = ind.value("decimals", table.default_decimals_);
      info.global_index = table.all_.size();
      if (table.by_name_.contains(info.name)) {
        throw ValidationError("system table: indicator listed twice: " + info.name);
      }
      table.by_name_.emplace(info.name, info.global_index);
      table.by_qualified_.emplace(info.qualified, info.global_index);
      table.per_system_[s].push_back(info);
      table.all_.push_back(std::move(info));
    }
  }
  return table;
}

const SystemTable& SystemTable::canonical() {
  static const SystemTable table = from_json(embedded_systems_json());
  return table;
}

std::string_view SystemTable::name(System s) const noexcept {
  return names_[static_cast<std::size_t>(s)];
}

std::optional<System> SystemTable::parse_system(std::string_view name) const {
  for (std::size_t s = 0; s < kSystemCount; ++s) {
    if (names_[s] == name) return kAllSystems[s];
  }
  return std::nullopt;
}

const std::vector<IndicatorInfo>& SystemTable::indicators(System s) const {
  return per_system_[static_cast<std::size_t>(s)];
}

const IndicatorInfo* SystemTable::find(std::string_view indicator) const {
  const auto it = by_name_.find(std::string(indicator));
  if (it != by_name_.end()) return &all_[it->second];
  return find_qualified(indicator);
}

const IndicatorInfo* SystemTable::find_qualified(std::string_view qualified) const {
  const auto it = by_qualified_.find(std::string(qualified));
  return it == by_qualified_.end() ? nullptr : &all_[it->second];
}

std::optional<System> SystemTable::system_of(std::string_view indicator) const {
  if (const auto* info = find(indicator)) return info->system;
  return std::nullopt;
}

int SystemTable::decimals_for(std::string_view indicator) const {
  if (const auto* info = find(indicator)) return info->decimals;
  return default_decimals_;
}

std::string_view system_name(System s) { return SystemTable::canonical().name(s); }

std::string qualified_name(System s, std::string_view indicator) {
  std::string out(system_name(s));
  out += '.';
  out += indicator;
  return out;
}

}  // namespace organsim

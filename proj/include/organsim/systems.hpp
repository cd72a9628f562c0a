#pragma once

// Canonical grouping of ICU indicators into the nine physiological systems.
// The table is loaded from data/systems_v1.json, which is compiled into the
// library; indicator names are matched as exact strings.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace organsim {

enum class System : std::uint8_t {
  Respiratory,
  Blood,
  Coagulation,
  Immune,
  Nervous,
  Cardiovascular,
  Hepatic,
  Renal,
  Metabolism,
};

inline constexpr std::size_t kSystemCount = 9;

inline constexpr std::array<System, kSystemCount> kAllSystems{
    System::Respiratory, System::Blood,   System::Coagulation,
    System::Immune,      System::Nervous, System::Cardiovascular,
    System::Hepatic,     System::Renal,   System::Metabolism};

struct IndicatorInfo {
  std::string name;       // e.g. "pH"
  std::string qualified;  // e.g. "Respiratory.pH"
  System system;
  int decimals;           // maximum decimals used when rendering values
  std::size_t global_index;  // position in table order across all systems
};

class SystemTable {
 public:
  static const SystemTable& canonical();

  std::string_view version() const noexcept { return version_; }

  // Display name used in prompts, e.g. "Metabolism and endocrine".
  std::string_view name(System s) const noexcept;
  std::optional<System> parse_system(std::string_view name) const;

  const std::vector<IndicatorInfo>& indicators(System s) const;
  const std::vector<IndicatorInfo>& all() const noexcept { return all_; }

  // Lookup by bare indicator name ("pH") or qualified name ("Respiratory.pH").
  const IndicatorInfo* find(std::string_view indicator) const;
  const IndicatorInfo* find_qualified(std::string_view qualified) const;
  std::optional<System> system_of(std::string_view indicator) const;

  int decimals_for(std::string_view indicator) const;

  // Builds a table from a JSON document with the same layout as
  // data/systems_v1.json. Throws ValidationError on malformed input.
  static SystemTable from_json(std::string_view json_text);

 private:
  SystemTable() = default;

  std::string version_;
  int default_decimals_ = 2;
  std::array<std::string, kSystemCount> names_;
  std::array<std::vector<IndicatorInfo>, kSystemCount> per_system_;
  std::vector<IndicatorInfo> all_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::unordered_map<std::string, std::size_t> by_qualified_;
};

std::string_view system_name(System s);
std::string qualified_name(System s, std::string_view indicator);

// Text compiled in from data/systems_v1.json.
std::string_view embedded_systems_json();

}  // namespace organsim

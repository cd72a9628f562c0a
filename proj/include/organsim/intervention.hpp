#pragma once

// Treatment edits used to build counterfactual runs.

#include <optional>
#include <string>
#include <variant>

#include <json.hpp>

#include "organsim/cohort.hpp"

namespace organsim {

struct MoveTreatment {
  std::string drug;
  double new_time_h = 0.0;
  std::optional<double> from_time_h;  // first event of `drug` when absent
};

struct RemoveTreatment {
  std::string drug;
  std::optional<double> from_time_h;
};

struct AddTreatment {
  std::string drug;
  double time_h = 0.0;
  double dose = 0.0;
};

using InterventionEdit = std::variant<MoveTreatment, RemoveTreatment, AddTreatment>;

// Accepts {"op": "move"|"remove"|"add", ...} or the shorthand forms
// {drug, new_time_h}, {drug, remove: true}, {drug, add: true, time_h, dose}.
InterventionEdit edit_from_json(const nlohmann::json& j);  // EditRejected
nlohmann::json edit_to_json(const InterventionEdit& e);
std::string describe_edit(const InterventionEdit& e);

// Returns an edited copy with treatments re-sorted and a provenance note.
// Unknown drug or event for move/remove -> EditRejected.
PatientRecord apply_intervention_edit(const PatientRecord& record, const InterventionEdit& edit);

// The edit that undoes `edit` when applied to the edited record.
InterventionEdit inverse_edit(const PatientRecord& before, const InterventionEdit& edit);

}  // namespace organsim

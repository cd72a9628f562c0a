#include "organsim/intervention.hpp"

#include <algorithm>
#include <cmath>

#include "organsim/errors.hpp"
#include "organsim/numfmt.hpp"

namespace organsim {

using nlohmann::json;

namespace {

constexpr double kTimeTol = 1e-9;

std::vector<TreatmentEvent>::const_iterator find_event(const std::vector<TreatmentEvent>& ev,
                                                       const std::string& drug,
                                                       std::optional<double> at) {
  const auto it = std::find_if(ev.begin(), ev.end(), [&](const TreatmentEvent& e) {
    return e.drug == drug && (!at || std::fabs(e.time_h - *at) < kTimeTol);
  });
  if (it == ev.end()) {
    if (std::none_of(ev.begin(), ev.end(), [&](const auto& e) { return e.drug == drug; })) {
      throw EditRejected("unknown drug '" + drug + "'");
    }
    throw EditRejected("no '" + drug + "' event at " + format_compact(*at, 4) + " h");
  }
  return it;
}

void check_time(double t, const char* what) {
  if (!std::isfinite(t) || t < 0.0) throw EditRejected(std::string(what) + " must be a finite time >= 0");
}

std::optional<double> opt_time(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

InterventionEdit edit_from_json(const json& j) {
  if (!j.is_object()) throw EditRejected("edit must be a JSON object");
  try {
    const auto drug = j.at("drug").get<std::string>();
    if (drug.empty()) throw EditRejected("edit: empty drug name");
    std::string op;
    if (j.contains("op")) {
      op = j.at("op").get<std::string>();
    } else if (j.value("remove", false)) {
      op = "remove";
    } else if (j.value("add", false)) {
      op = "add";
    } else if (j.contains("new_time_h")) {
      op = "move";
    }
    if (op == "move") {
      MoveTreatment m{drug, j.at("new_time_h").get<double>(), opt_time(j, "from_time_h")};
      check_time(m.new_time_h, "new_time_h");
      return m;
    }
    if (op == "remove") return RemoveTreatment{drug, opt_time(j, "from_time_h")};
    if (op == "add") {
      AddTreatment a{drug, j.at("time_h").get<double>(), j.at("dose").get<double>()};
      check_time(a.time_h, "time_h");
      if (!std::isfinite(a.dose) || a.dose < 0.0) throw EditRejected("dose must be finite and >= 0");
      return a;
    }
    throw EditRejected("edit: cannot tell move, remove or add apart");
  } catch (const json::exception& e) {
    throw EditRejected(std::string("edit: ") + e.what());
  }
}

json edit_to_json(const InterventionEdit& e) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, MoveTreatment>) {
          json j{{"op", "move"}, {"drug", x.drug}, {"new_time_h", x.new_time_h}};
          if (x.from_time_h) j["from_time_h"] = *x.from_time_h;
          return j;
        } else if constexpr (std::is_same_v<T, RemoveTreatment>) {
          json j{{"op", "remove"}, {"drug", x.drug}};
          if (x.from_time_h) j["from_time_h"] = *x.from_time_h;
          return j;
        } else {
          return {{"op", "add"}, {"drug", x.drug}, {"time_h", x.time_h}, {"dose", x.dose}};
        }
      },
      e);
}

std::string describe_edit(const InterventionEdit& e) { return "edit " + edit_to_json(e).dump(); }

PatientRecord apply_intervention_edit(const PatientRecord& record, const InterventionEdit& edit) {
  PatientRecord out = record;
  auto& ev = out.treatments;
  if (const auto* m = std::get_if<MoveTreatment>(&edit)) {
    check_time(m->new_time_h, "new_time_h");
    const auto it = find_event(ev, m->drug, m->from_time_h);
    ev[static_cast<std::size_t>(it - ev.begin())].time_h = m->new_time_h;
  } else if (const auto* r = std::get_if<RemoveTreatment>(&edit)) {
    ev.erase(find_event(ev, r->drug, r->from_time_h));
  } else {
    const auto& a = std::get<AddTreatment>(edit);
    check_time(a.time_h, "time_h");
    if (!std::isfinite(a.dose) || a.dose < 0.0) throw EditRejected("dose must be finite and >= 0");
    ev.push_back({a.drug, a.time_h, a.dose});
  }
  sort_treatments(ev);
  out.provenance.push_back(describe_edit(edit));
  return out;
}

InterventionEdit inverse_edit(const PatientRecord& before, const InterventionEdit& edit) {
  if (const auto* m = std::get_if<MoveTreatment>(&edit)) {
    const auto it = find_event(before.treatments, m->drug, m->from_time_h);
    return MoveTreatment{m->drug, it->time_h, m->new_time_h};
  }
  if (const auto* r = std::get_if<RemoveTreatment>(&edit)) {
    const auto it = find_event(before.treatments, r->drug, r->from_time_h);
    return AddTreatment{it->drug, it->time_h, it->dose};
  }
  const auto& a = std::get<AddTreatment>(edit);
  return RemoveTreatment{a.drug, a.time_h};
}

}  // namespace organsim

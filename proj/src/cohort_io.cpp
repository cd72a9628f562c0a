#include "organsim/cohort_io.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "organsim/errors.hpp"

namespace organsim {

using nlohmann::json;

namespace {

json base_info_json(const BaseInfo& b) {
  json j{{"age", b.age_years},
         {"sex", b.sex},
         {"weight_kg", b.weight_kg},
         {"height_cm", b.height_cm},
         {"history", b.history},
         {"smoking", b.smoking},
         {"drinking", b.drinking},
         {"insurance", b.insurance},
         {"region", b.region},
         {"marital_status", b.marital_status},
         {"icu_type", b.icu_type}};
  if (b.bsa_m2) j["bsa_m2"] = *b.bsa_m2;
  return j;
}

template <typename T>
T required(const json& j, const char* key, const char* where) {
  if (!j.contains(key) || j.at(key).is_null()) {
    throw InvalidRecord(std::string(where) + "." + key + " is missing");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidRecord(std::string(where) + "." + key + " has the wrong type");
  }
}

BaseInfo base_info_from_json(const json& j) {
  BaseInfo b;
  b.age_years = required<double>(j, "age", "base_info");
  b.sex = required<std::string>(j, "sex", "base_info");
  b.weight_kg = required<double>(j, "weight_kg", "base_info");
  b.height_cm = required<double>(j, "height_cm", "base_info");
  if (j.contains("bsa_m2") && !j.at("bsa_m2").is_null()) b.bsa_m2 = j.at("bsa_m2").get<double>();
  b.history = j.value("history", std::vector<std::string>{});
  b.smoking = j.value("smoking", false);
  b.drinking = j.value("drinking", false);
  b.insurance = required<std::string>(j, "insurance", "base_info");
  b.region = required<std::string>(j, "region", "base_info");
  b.marital_status = required<std::string>(j, "marital_status", "base_info");
  b.icu_type = required<std::string>(j, "icu_type", "base_info");
  return b;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json to_json(const PatientRecord& r) {
  json systems = json::object();
  for (const auto& [name, obs] : r.systems) {
    json arr = json::array();
    for (const auto& o : obs) {
      arr.push_back({{"indicator", o.indicator}, {"time_h", o.time_h}, {"value", o.value}});
    }
    systems[name] = std::move(arr);
  }
  json treatments = json::array();
  for (const auto& t : r.treatments) {
    treatments.push_back({{"drug", t.drug}, {"time_h", t.time_h}, {"dose", t.dose}});
  }
  json j{{"patient_id", r.patient_id},
         {"base_info", base_info_json(r.base_info)},
         {"systems", std::move(systems)},
         {"treatments", std::move(treatments)}};
  if (r.sofa_score) j["sofa_score"] = *r.sofa_score;
  if (!r.outcome_labels.empty()) j["outcome_labels"] = r.outcome_labels;
  if (!r.provenance.empty()) j["provenance"] = r.provenance;
  return j;
}

PatientRecord record_from_json(const json& j) {
  if (!j.is_object()) throw InvalidRecord("record is not a JSON object");
  PatientRecord r;
  r.patient_id = required<std::string>(j, "patient_id", "record");
  if (!j.contains("base_info")) throw InvalidRecord("record.base_info is missing");
  r.base_info = base_info_from_json(j.at("base_info"));
  if (j.contains("systems")) {
    for (const auto& [name, arr] : j.at("systems").items()) {
      auto& dst = r.systems[name];
      for (const auto& o : arr) {
        RawObservation obs;
        obs.indicator = required<std::string>(o, "indicator", "observation");
        obs.time_h = required<double>(o, "time_h", "observation");
        // JSON has no NaN/inf; a null value is the closest thing and is rejected.
        if (!o.contains("value") || !o.at("value").is_number()) {
          throw InvalidRecord("indicator '" + obs.indicator + "': non-finite value");
        }
        obs.value = o.at("value").get<double>();
        dst.push_back(std::move(obs));
      }
    }
  }
  if (j.contains("treatments")) {
    for (const auto& t : j.at("treatments")) {
      TreatmentEvent ev;
      ev.drug = required<std::string>(t, "drug", "treatment");
      ev.time_h = required<double>(t, "time_h", "treatment");
      ev.dose = required<double>(t, "dose", "treatment");
      r.treatments.push_back(std::move(ev));
    }
  }
  sort_treatments(r.treatments);
  if (j.contains("sofa_score") && !j.at("sofa_score").is_null()) {
    r.sofa_score = j.at("sofa_score").get<int>();
  }
  if (j.contains("outcome_labels")) {
    r.outcome_labels = j.at("outcome_labels").get<std::map<std::string, double>>();
  }
  if (j.contains("provenance")) r.provenance = j.at("provenance").get<std::vector<std::string>>();
  validate_record(r);
  return r;
}

json to_json(const IndicatorGrid& g) {
  json series = json::array();
  for (const auto& s : g.series) {
    json values = json::array();
    for (double v : s.values) values.push_back(number_or_null(v));
    std::vector<int> mask;
    mask.reserve(s.observed.size());
    for (bool b : s.observed) mask.push_back(b ? 1 : 0);
    series.push_back({{"indicator", s.indicator},
                      {"system", std::string(system_name(s.system))},
                      {"available", s.available},
                      {"values", std::move(values)},
                      {"observed", std::move(mask)},
                      {"decay", s.decay}});
  }
  return {{"start_h", g.start_h},
          {"step_h", g.step_h},
          {"length", g.length},
          {"series", std::move(series)}};
}

IndicatorGrid grid_from_json(const json& j) {
  IndicatorGrid g;
  g.start_h = j.at("start_h").get<double>();
  g.step_h = j.at("step_h").get<double>();
  g.length = j.at("length").get<std::size_t>();
  const auto& table = SystemTable::canonical();
  for (const auto& s : j.at("series")) {
    IndicatorSeries ser;
    ser.indicator = s.at("indicator").get<std::string>();
    const auto sys = table.system_of(ser.indicator);
    if (!sys) throw ValidationError("grid: unknown indicator '" + ser.indicator + "'");
    ser.system = *sys;
    ser.available = s.value("available", true);
    for (const auto& v : s.at("values")) {
      ser.values.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                       : v.get<double>());
    }
    for (const auto& m : s.at("observed")) ser.observed.push_back(m.get<int>() != 0);
    ser.decay = s.at("decay").get<std::vector<double>>();
    if (ser.values.size() != g.length || ser.observed.size() != g.length ||
        ser.decay.size() != g.length) {
      throw ValidationError("grid: series '" + ser.indicator + "' has the wrong length");
    }
    g.series.push_back(std::move(ser));
  }
  return g;
}

CohortLoad read_cohort(std::istream& in) {
  CohortLoad out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out.records.push_back(record_from_json(j.contains("record") ? j.at("record") : j));
    } catch (const json::exception& e) {
      out.rejected.push_back({number, std::string("malformed JSON: ") + e.what()});
    } catch (const Error& e) {
      out.rejected.push_back({number, e.what()});
    }
  }
  return out;
}

CohortLoad read_cohort_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open cohort file '" + path + "'");
  return read_cohort(in);
}

void write_cohort(std::ostream& out, const std::vector<PatientRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

}  // namespace organsim

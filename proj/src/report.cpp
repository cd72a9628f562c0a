#include "organsim/report.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "organsim/errors.hpp"

namespace organsim {

using nlohmann::json;

namespace {

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

CohortReport cohort_report(const std::vector<ReportInput>& inputs,
                           const std::vector<PathwayDefinition>& pathways, const RangeTable& ranges,
                           double grace_steps) {
  CohortReport out;
  std::vector<std::string> labels;
  for (auto st : {SofaStratum::Low, SofaStratum::Mid, SofaStratum::High}) {
    labels.emplace_back(stratum_label(st));
  }
  std::map<std::string, std::vector<std::size_t>> by_stratum;
  std::vector<IndicatorGrid> truths, preds;

  double weighted = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& in = inputs[k];
    if (!in.run || !in.record) throw ValidationError("report: missing run or record");
    if (in.run->patient_id != in.record->patient_id) {
      throw ValidationError("report: run " + in.run->run_id + " is not for patient " +
                            in.record->patient_id);
    }
    truths.push_back(preprocess(*in.record, in.run->config.preprocess));
    out.runs.push_back(mse_report(*in.run, truths.back()));
    preds.push_back(predicted_grid(*in.run, truths.back()));
    weighted += out.runs.back().pse * static_cast<double>(out.runs.back().scored);
    out.scored += out.runs.back().scored;
    by_stratum["all"].push_back(k);
    if (in.record->sofa_score) {
      by_stratum[std::string(stratum_label(stratum_of(*in.record->sofa_score)))].push_back(k);
    } else {
      out.notes.push_back("patient " + in.record->patient_id + " has no SOFA score; counted in 'all' only");
    }
  }
  out.pse = out.scored ? weighted / static_cast<double>(out.scored) : 0.0;
  for (const auto& l : labels) {
    if (!by_stratum.count(l)) out.notes.push_back("stratum " + l + " is empty and omitted");
  }

  std::vector<const PathwayDefinition*> usable;
  for (const auto& p : pathways) {
    if (p.thresholds_configured()) {
      usable.push_back(&p);
    } else {
      out.notes.push_back("pathway " + p.name + " skipped: operator-supplied thresholds are unset");
    }
  }

  std::vector<std::string> order{"all"};
  order.insert(order.end(), labels.begin(), labels.end());
  for (const auto& stratum : order) {
    const auto it = by_stratum.find(stratum);
    if (it == by_stratum.end()) continue;
    for (auto sys : kAllSystems) {
      std::vector<double> v;
      for (auto k : it->second) {
        for (const auto& x : out.runs[k].per_indicator) {
          if (x.system == sys) v.push_back(x.mse);
        }
      }
      if (v.empty()) continue;
      const auto [m, sd] = mean_sd(v);
      out.systems.push_back({stratum, sys, m, sd, v.size()});
    }
    for (const auto* p : usable) {
      StratumPathwayRow row{stratum, p->name, 0.0, std::nullopt, std::nullopt, 0, 0};
      double dt = 0.0, ne = 0.0;
      std::size_t ndt = 0, nne = 0;
      for (auto k : it->second) {
        const auto r = evaluate_pathway(preds[k], truths[k], *p, ranges, grace_steps);
        row.mean_accuracy += r.accuracy;
        ++row.runs;
        if (r.qualifies) ++row.qualifying;
        if (r.delta_t_h) dt += *r.delta_t_h, ++ndt;
        if (r.normalized_error) ne += *r.normalized_error, ++nne;
      }
      row.mean_accuracy /= static_cast<double>(row.runs);
      if (ndt) row.mean_delta_t_h = dt / static_cast<double>(ndt);
      if (nne) row.mean_normalized_error = ne / static_cast<double>(nne);
      out.pathways.push_back(row);
    }
  }
  return out;
}

json CohortReport::to_json() const {
  json r = json::array();
  for (const auto& x : runs) r.push_back(x.to_json());
  json s = json::array();
  for (const auto& x : systems) {
    s.push_back({{"stratum", x.stratum},
                 {"system", std::string(system_name(x.system))},
                 {"mean", x.mean},
                 {"sd", x.sd},
                 {"samples", x.samples}});
  }
  json p = json::array();
  for (const auto& x : pathways) {
    p.push_back({{"stratum", x.stratum},
                 {"pathway", x.pathway},
                 {"mean_accuracy", x.mean_accuracy},
                 {"mean_delta_t_h", opt(x.mean_delta_t_h)},
                 {"mean_normalized_error", opt(x.mean_normalized_error)},
                 {"runs", x.runs},
                 {"qualifying", x.qualifying}});
  }
  return {{"runs", r}, {"systems", s}, {"pathways", p}, {"pse", pse}, {"scored", scored}, {"notes", notes}};
}

std::string CohortReport::to_tsv() const {
  std::ostringstream o;
  o.precision(17);
  o << "section\tstratum\tkey\tfield\tvalue\n";
  o << "cohort\tall\tPSE\tvalue\t" << pse << "\n";
  for (const auto& x : systems) {
    o << "system\t" << x.stratum << '\t' << system_name(x.system) << "\tmean\t" << x.mean << '\n';
    o << "system\t" << x.stratum << '\t' << system_name(x.system) << "\tsd\t" << x.sd << '\n';
  }
  for (const auto& x : pathways) {
    o << "pathway\t" << x.stratum << '\t' << x.pathway << "\taccuracy\t" << x.mean_accuracy << '\n';
    if (x.mean_delta_t_h) o << "pathway\t" << x.stratum << '\t' << x.pathway << "\tdelta_t_h\t" << *x.mean_delta_t_h << '\n';
  }
  for (const auto& r : runs) {
    o << "run\t-\t" << r.run_id << "\tPSE\t" << r.pse << '\n';
    for (const auto& [sys, series] : r.per_step_system) {
      for (std::size_t t = 0; t < series.size(); ++t) {
        o << "heatmap\t" << r.run_id << '\t' << system_name(sys) << "\tstep_" << t << '\t' << series[t] << '\n';
      }
    }
  }
  for (const auto& n : notes) o << "note\t-\t-\t-\t" << n << '\n';
  return o.str();
}

}  // namespace organsim

#pragma once

// Newline-delimited JSON cohort files (one patient per line). The field layout
// is documented in docs/cohort_schema.md.

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "organsim/cohort.hpp"

namespace organsim {

nlohmann::json to_json(const PatientRecord& record);
PatientRecord record_from_json(const nlohmann::json& j);

nlohmann::json to_json(const IndicatorGrid& grid);
IndicatorGrid grid_from_json(const nlohmann::json& j);

struct RejectedLine {
  std::size_t line_number = 0;
  std::string message;
};

struct CohortLoad {
  std::vector<PatientRecord> records;
  std::vector<RejectedLine> rejected;
};

// Parses and validates each line independently; bad lines are reported in
// `rejected` and skipped. Accepts both raw cohort lines and `ingest` output
// lines (which wrap the record under "record").
CohortLoad read_cohort(std::istream& in);
CohortLoad read_cohort_file(const std::string& path);

void write_cohort(std::ostream& out, const std::vector<PatientRecord>& records);

}  // namespace organsim

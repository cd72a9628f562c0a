#pragma once

// Typed model of the structured prompt/output blocks exchanged with agent
// backends, plus a byte-stable renderer and tolerant parsers. The text layout
// is frozen in docs/grammar.md.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "organsim/errors.hpp"
#include "organsim/systems.hpp"

namespace organsim {

enum class TrendType { Rise, Fall, Fluctuate, RemainStable };

std::string_view trend_token(TrendType t);
// Accepts "rise", "fall", "fluctuate", "remain stable" and "no change".
std::optional<TrendType> parse_trend_token(std::string_view token);

struct NamedSeries {
  std::string name;  // bare indicator name inside a system window, qualified elsewhere
  std::vector<double> values;
  bool operator==(const NamedSeries&) const = default;
};

struct BaseInfoBlock {
  std::string text;
  bool operator==(const BaseInfoBlock&) const = default;
};

struct SystemWindowBlock {
  System system = System::Respiratory;
  double start_h = 0.0;
  double end_h = 0.0;
  std::vector<NamedSeries> series;  // bare indicator names of `system`
  bool operator==(const SystemWindowBlock&) const = default;
};

struct DoseAt {
  long long hour = 0;
  double dose = 0.0;
  bool operator==(const DoseAt&) const = default;
};

struct DrugCourse {
  std::string drug;
  std::vector<DoseAt> doses;
  bool operator==(const DrugCourse&) const = default;
};

struct TreatmentBlock {
  std::vector<DrugCourse> courses;
  bool operator==(const TreatmentBlock&) const = default;
};

struct SymbolicEvent {
  double time_h = 0.0;
  std::string indicator;  // qualified
  TrendType type = TrendType::RemainStable;
  double value = 0.0;
  bool operator==(const SymbolicEvent&) const = default;
};

// One `T=...` line. The label is kept verbatim so "T=9.0" and "T=10" both
// survive a parse/render cycle.
struct SummaryRow {
  double time_h = 0.0;
  std::string time_label;
  std::vector<SymbolicEvent> events;
  bool operator==(const SummaryRow&) const = default;

  static SummaryRow at(double time_h, std::vector<SymbolicEvent> events = {});
};

struct SummaryBlock {
  std::vector<SummaryRow> rows;
  bool operator==(const SummaryBlock&) const = default;
};

struct CandidateBlock {
  std::vector<std::string> entries;
  bool operator==(const CandidateBlock&) const = default;
};

struct ReferenceEntry {
  std::string indicator;  // qualified
  std::vector<double> values;
  bool operator==(const ReferenceEntry&) const = default;
};

struct ReferenceBlock {
  std::vector<ReferenceEntry> entries;
  bool operator==(const ReferenceBlock&) const = default;
};

struct SimulationEntry {
  std::string indicator;  // qualified
  double value = 0.0;
  double confidence = 0.0;
  bool operator==(const SimulationEntry&) const = default;
};

struct SimulationBlock {
  std::vector<SimulationEntry> entries;
  bool operator==(const SimulationBlock&) const = default;

  const SimulationEntry* find(std::string_view qualified) const;
};

using ParsedSimulation = SimulationBlock;

struct ResidualEntry {
  std::string indicator;  // qualified
  std::optional<double> residual;
  bool operator==(const ResidualEntry&) const = default;
};

struct ResidualBlock {
  std::vector<ResidualEntry> entries;
  bool operator==(const ResidualBlock&) const = default;

  // Missing lines read as null.
  std::optional<double> get(std::string_view qualified) const;
};

struct ResidualHistoryRow {
  std::string indicator;  // qualified
  std::vector<std::optional<double>> values;
  bool operator==(const ResidualHistoryRow&) const = default;
};

struct ResidualHistoryBlock {
  std::vector<ResidualHistoryRow> rows;
  bool operator==(const ResidualHistoryBlock&) const = default;
};

using Block = std::variant<BaseInfoBlock, SystemWindowBlock, TreatmentBlock, SummaryBlock,
                           CandidateBlock, ReferenceBlock, SimulationBlock, ResidualHistoryBlock>;

enum class BlockType {
  BaseInfo,
  SystemWindow,
  Treatment,
  Summary,
  Candidate,
  Reference,
  Simulation,
  ResidualHistory,
};

BlockType block_type(const Block& b);
std::string_view block_tag(BlockType t);

enum class PromptKind { SimulatorStage1, Analyzer, Correlator, SimulatorStage2, Compensator };

std::string_view prompt_kind_name(PromptKind k);
std::optional<PromptKind> parse_prompt_kind(std::string_view name);

struct StructuredPrompt {
  PromptKind kind = PromptKind::SimulatorStage1;
  std::vector<Block> blocks;
  double gate_threshold = 0.8;  // only rendered by compensator prompts

  bool operator==(const StructuredPrompt&) const = default;

  const SystemWindowBlock* system_window() const;
  template <typename T>
  const T* get() const {
    for (const auto& b : blocks) {
      if (const auto* p = std::get_if<T>(&b)) return p;
    }
    return nullptr;
  }
};

// Canonical block order and which blocks are mandatory for a prompt kind.
struct LayoutSlot {
  BlockType type;
  bool mandatory;
};
std::span<const LayoutSlot> prompt_layout(PromptKind kind);

// Throws RenderError when a mandatory block is missing or the order is wrong.
std::string render_prompt(const StructuredPrompt& prompt);

std::string render_output(const SimulationBlock& block);
std::string render_output(const SummaryBlock& block);
std::string render_output(const ReferenceBlock& block);
std::string render_output(const ResidualBlock& block);

// Text of the `<baseinfo>` sentence for a patient.
struct BaseInfo;
std::string describe_base_info(std::string_view patient_id, const BaseInfo& info);

// ---------------------------------------------------------------------------
// Parsing

enum class ViolationKind { Structural, Range, UnknownIndicator, TargetSystemReference };

std::string_view violation_kind_name(ViolationKind k);

struct Violation {
  ViolationKind kind = ViolationKind::Structural;
  int line = 0;  // 1-based line in the parsed text, 0 when not line-specific
  std::string message;
};

// Fatal parse error.
class GrammarError : public ValidationError {
 public:
  explicit GrammarError(Violation v);
  const Violation& violation() const noexcept { return violation_; }

 private:
  Violation violation_;
};

// `expected`, when given, lists the qualified indicators that must each appear
// exactly once.
ParsedSimulation parse_simulation_block(std::string_view text,
                                        std::span<const std::string> expected = {});

struct ReferenceParse {
  std::vector<ReferenceEntry> entries;
  std::vector<Violation> violations;
};
ReferenceParse parse_reference_block(std::string_view text, std::optional<System> target = {});

SummaryBlock parse_summary_rows(std::string_view text);
std::vector<SymbolicEvent> parse_summary_block(std::string_view text);

ResidualBlock parse_residual_block(std::string_view text);

StructuredPrompt parse_prompt(std::string_view text);

enum class OutputKind { Simulation, Summary, Reference, Residual };
std::optional<OutputKind> parse_output_kind(std::string_view name);
std::string_view output_kind_name(OutputKind k);

// Never throws: every problem is reported as a violation.
std::vector<Violation> validate_output(std::string_view text, OutputKind kind,
                                       std::span<const std::string> expected = {},
                                       std::optional<System> target = {});

// Fraction of outputs that parse with zero violations (1.0 for an empty list).
double structural_compliance(std::span<const std::string> outputs, OutputKind kind);

}  // namespace organsim

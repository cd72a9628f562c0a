#include <algorithm>
#include <array>

#include "organsim/cohort.hpp"
#include "organsim/grammar.hpp"
#include "organsim/numfmt.hpp"

namespace organsim {

namespace {

constexpr std::string_view kTag = "    ";
constexpr std::string_view kBody = "        ";
constexpr std::size_t kBaseInfoWidth = 120;
constexpr std::size_t kInstructionWidth = 122;

int decimals_of(std::string_view name) { return SystemTable::canonical().decimals_for(name); }

void line(std::string& out, std::string_view indent, std::string_view text) {
  out += indent;
  out += text;
  out += '\n';
}

std::string value_list(std::string_view indicator, const std::vector<double>& values) {
  const int dec = decimals_of(indicator);
  std::string s = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ", ";
    s += format_value(values[i], dec);
  }
  s += ']';
  return s;
}

std::string optional_list(const std::vector<std::optional<double>>& values) {
  std::string s = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ", ";
    s += values[i] ? format_value(*values[i], 2) : "null";
  }
  s += ']';
  return s;
}

std::string summary_row(const SummaryRow& row) {
  std::string s = "T=" + (row.time_label.empty() ? format_compact(row.time_h) : row.time_label);
  s += ',';
  for (const auto& ev : row.events) {
    s += ' ';
    s += ev.indicator;
    s += ' ';
    s += trend_token(ev.type);
    s += " at ";
    s += format_value(ev.value, decimals_of(ev.indicator));
    s += ';';
  }
  return s;
}

void render_block(std::string& out, const BaseInfoBlock& b, PromptKind) {
  line(out, kTag, "<baseinfo>");
  for (const auto& l : wrap_words(b.text, kBody, kBaseInfoWidth)) {
    out += l;
    out += '\n';
  }
}

void render_block(std::string& out, const SystemWindowBlock& b, PromptKind) {
  const auto sys = system_name(b.system);
  line(out, kTag, "<system=" + std::string(sys) + ">");
  line(out, kTag, "<ICU Time=" + format_value(b.start_h, 2) + "~" + format_value(b.end_h, 2) + "h>");
  for (const auto& s : b.series) {
    line(out, kBody, qualified_name(b.system, s.name) + ": " + value_list(s.name, s.values));
  }
}

void render_block(std::string& out, const TreatmentBlock& b, PromptKind) {
  line(out, kTag, "<treatment>");
  for (const auto& c : b.courses) {
    std::string s = "medcine." + c.drug + ":";
    for (std::size_t i = 0; i < c.doses.size(); ++i) {
      s += i ? ", [" : " [";
      s += std::to_string(c.doses[i].hour);
      s += ", ";
      s += format_fixed(c.doses[i].dose, 3);
      s += ']';
    }
    line(out, kBody, s);
  }
}

void render_block(std::string& out, const SummaryBlock& b, PromptKind kind) {
  // The analyzer receives its own history under <sum-his>; the correlator gets
  // the running summary without a closing tag.
  const bool history = kind == PromptKind::Analyzer;
  line(out, kTag, history ? "<sum-his>" : "<summary>");
  for (const auto& r : b.rows) line(out, kBody, summary_row(r));
  if (history) line(out, kTag, "</sum-his>");
}

void render_block(std::string& out, const CandidateBlock& b, PromptKind) {
  line(out, kTag, "<candidate>");
  for (const auto& e : b.entries) line(out, kBody, e);
  line(out, kTag, "</candidate>");
}

void render_block(std::string& out, const ReferenceBlock& b, PromptKind) {
  line(out, kTag, "<reference>");
  for (const auto& e : b.entries) {
    if (e.values.empty()) {
      line(out, kBody, e.indicator);
    } else {
      line(out, kBody, e.indicator + ": " + value_list(e.indicator, e.values));
    }
  }
  line(out, kTag, "</reference>");
}

void render_block(std::string& out, const SimulationBlock& b, PromptKind) {
  line(out, kTag, "<simulation>");
  for (const auto& e : b.entries) {
    line(out, kBody,
         e.indicator + ": (" + format_value(e.value, decimals_of(e.indicator)) + ", " +
             format_value(e.confidence, 2) + ")");
  }
  line(out, kTag, "</simulation>");
}

void render_block(std::string& out, const ResidualHistoryBlock& b, PromptKind) {
  line(out, kTag, "<res-his>");
  for (const auto& r : b.rows) line(out, kBody, r.indicator + ": " + optional_list(r.values));
  line(out, kTag, "</res-his>");
}

bool is_empty_block(const Block& b) {
  return std::visit(
      [](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, BaseInfoBlock>) return x.text.empty();
        if constexpr (std::is_same_v<T, TreatmentBlock>) return x.courses.empty();
        if constexpr (std::is_same_v<T, SummaryBlock>) return x.rows.empty();
        if constexpr (std::is_same_v<T, ReferenceBlock>) return x.entries.empty();
        if constexpr (std::is_same_v<T, ResidualHistoryBlock>) return x.rows.empty();
        return false;
      },
      b);
}

void render_footer(std::string& out, PromptKind kind, std::string_view sys, double end_h,
                   double gate) {
  const std::string s(sys);
  switch (kind) {
    case PromptKind::SimulatorStage1:
    case PromptKind::SimulatorStage2:
      line(out, kTag, "Please predict each variable of " + s + " system in the format:");
      line(out, kTag, "<simulation>");
      line(out, kBody, s + ".var: (value, confidence)");
      line(out, kBody, s + ".var: (value, confidence)");
      line(out, kBody, "...");
      line(out, kTag, "</simulation>");
      break;
    case PromptKind::Analyzer: {
      const std::string now = format_compact(end_h);
      line(out, kTag,
           "Please summarize the trend for each variable up to the current time, " + now +
               " h. For each variable, choose one of the following event types: [rise, fall, "
               "fluctuate, no change]. The summary should be in the format:");
      line(out, "   ", "<summary>");
      line(out, "       ", "T=" + now + ", " + s + ".variable: [event type] to value; " + s +
                               ".variable: [event type] to value; ...;");
      line(out, "   ", "</summary>");
      break;
    }
    case PromptKind::Correlator: {
      const std::string text =
          "Please select the most relevant variables from the candidate list as references for "
          "analyzing the current " +
          s + " system. List the selected variables in the reference block, one per line, "
              "excluding those from the " +
          s + " system. ";
      for (const auto& l : wrap_words(text, kTag, kInstructionWidth)) {
        out += l;
        out += '\n';
      }
      line(out, kTag, "<reference>");
      line(out, kBody, "system1.var1");
      line(out, kBody, "system2.var2");
      line(out, kBody, "...");
      line(out, kTag, "</reference>");
      break;
    }
    case PromptKind::Compensator:
      line(out, kTag,
           "Please provide residuals for variables with uncertain simulations (confidence < " +
               format_compact(gate) + "), using the following format ('null' if not applicable):");
      line(out, kTag, "<residual>");
      line(out, kBody, s + ".var: (residual)");
      line(out, kBody, s + ".var: (residual)");
      line(out, kBody, "...");
      line(out, kTag, "</residual>");
      break;
  }
}

}  // namespace

std::string_view trend_token(TrendType t) {
  switch (t) {
    case TrendType::Rise: return "rise";
    case TrendType::Fall: return "fall";
    case TrendType::Fluctuate: return "fluctuate";
    case TrendType::RemainStable: return "remain stable";
  }
  return "remain stable";
}

std::optional<TrendType> parse_trend_token(std::string_view token) {
  token = trim(token);
  if (token == "rise") return TrendType::Rise;
  if (token == "fall") return TrendType::Fall;
  if (token == "fluctuate") return TrendType::Fluctuate;
  if (token == "remain stable" || token == "no change") return TrendType::RemainStable;
  return std::nullopt;
}

SummaryRow SummaryRow::at(double time_h, std::vector<SymbolicEvent> events) {
  SummaryRow r;
  r.time_h = time_h;
  r.time_label = format_compact(time_h);
  for (auto& e : events) e.time_h = time_h;
  r.events = std::move(events);
  return r;
}

const SimulationEntry* SimulationBlock::find(std::string_view qualified) const {
  for (const auto& e : entries) {
    if (e.indicator == qualified) return &e;
  }
  return nullptr;
}

std::optional<double> ResidualBlock::get(std::string_view qualified) const {
  for (const auto& e : entries) {
    if (e.indicator == qualified) return e.residual;
  }
  return std::nullopt;
}

BlockType block_type(const Block& b) { return static_cast<BlockType>(b.index()); }

std::string_view block_tag(BlockType t) {
  switch (t) {
    case BlockType::BaseInfo: return "baseinfo";
    case BlockType::SystemWindow: return "system";
    case BlockType::Treatment: return "treatment";
    case BlockType::Summary: return "summary";
    case BlockType::Candidate: return "candidate";
    case BlockType::Reference: return "reference";
    case BlockType::Simulation: return "simulation";
    case BlockType::ResidualHistory: return "res-his";
  }
  return "";
}

std::string_view prompt_kind_name(PromptKind k) {
  switch (k) {
    case PromptKind::SimulatorStage1: return "simulator_s1";
    case PromptKind::Analyzer: return "analyzer";
    case PromptKind::Correlator: return "correlator";
    case PromptKind::SimulatorStage2: return "simulator_s2";
    case PromptKind::Compensator: return "compensator";
  }
  return "";
}

std::optional<PromptKind> parse_prompt_kind(std::string_view name) {
  for (auto k : {PromptKind::SimulatorStage1, PromptKind::Analyzer, PromptKind::Correlator,
                 PromptKind::SimulatorStage2, PromptKind::Compensator}) {
    if (prompt_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

const SystemWindowBlock* StructuredPrompt::system_window() const { return get<SystemWindowBlock>(); }

std::span<const LayoutSlot> prompt_layout(PromptKind kind) {
  using B = BlockType;
  static constexpr std::array<LayoutSlot, 3> s1{
      {{B::BaseInfo, false}, {B::SystemWindow, true}, {B::Treatment, false}}};
  static constexpr std::array<LayoutSlot, 2> analyzer{
      {{B::SystemWindow, true}, {B::Summary, false}}};
  static constexpr std::array<LayoutSlot, 4> correlator{
      {{B::SystemWindow, true}, {B::Summary, false}, {B::Treatment, false}, {B::Candidate, true}}};
  static constexpr std::array<LayoutSlot, 4> s2{{{B::BaseInfo, false},
                                                 {B::SystemWindow, true},
                                                 {B::Treatment, false},
                                                 {B::Reference, false}}};
  static constexpr std::array<LayoutSlot, 3> comp{
      {{B::SystemWindow, true}, {B::Simulation, true}, {B::ResidualHistory, false}}};
  switch (kind) {
    case PromptKind::SimulatorStage1: return s1;
    case PromptKind::Analyzer: return analyzer;
    case PromptKind::Correlator: return correlator;
    case PromptKind::SimulatorStage2: return s2;
    case PromptKind::Compensator: return comp;
  }
  return {};
}

std::string render_prompt(const StructuredPrompt& prompt) {
  const auto layout = prompt_layout(prompt.kind);
  std::size_t slot = 0;
  for (const auto& b : prompt.blocks) {
    const auto t = block_type(b);
    while (slot < layout.size() && layout[slot].type != t) {
      if (layout[slot].mandatory) {
        throw RenderError(std::string(prompt_kind_name(prompt.kind)) + " prompt: missing <" +
                          std::string(block_tag(layout[slot].type)) + "> block");
      }
      ++slot;
    }
    if (slot == layout.size()) {
      throw RenderError(std::string(prompt_kind_name(prompt.kind)) + " prompt: <" +
                        std::string(block_tag(t)) + "> block is not allowed here");
    }
    ++slot;
  }
  for (; slot < layout.size(); ++slot) {
    if (layout[slot].mandatory) {
      throw RenderError(std::string(prompt_kind_name(prompt.kind)) + " prompt: missing <" +
                        std::string(block_tag(layout[slot].type)) + "> block");
    }
  }

  const auto* win = prompt.system_window();
  std::string out;
  for (const auto& b : prompt.blocks) {
    if (is_empty_block(b)) continue;
    std::visit([&](const auto& x) { render_block(out, x, prompt.kind); }, b);
  }
  render_footer(out, prompt.kind, system_name(win->system), win->end_h, prompt.gate_threshold);
  return out;
}

std::string render_output(const SimulationBlock& block) {
  std::string out;
  render_block(out, block, PromptKind::SimulatorStage1);
  return out;
}

std::string render_output(const SummaryBlock& block) {
  std::string out;
  line(out, kTag, "<summary>");
  for (const auto& r : block.rows) line(out, kBody, summary_row(r));
  line(out, kTag, "</summary>");
  return out;
}

std::string render_output(const ReferenceBlock& block) {
  std::string out;
  render_block(out, block, PromptKind::Correlator);
  return out;
}

std::string render_output(const ResidualBlock& block) {
  std::string out;
  line(out, kTag, "<residual>");
  for (const auto& e : block.entries) {
    line(out, kBody,
         e.indicator + ": (" + (e.residual ? format_value(*e.residual, 2) : "null") + ")");
  }
  line(out, kTag, "</residual>");
  return out;
}

std::string describe_base_info(std::string_view patient_id, const BaseInfo& b) {
  const bool female = b.sex == "female";
  const std::string subj = female ? "she" : "he";
  const std::string Subj = female ? "She" : "He";
  const std::string Poss = female ? "Her" : "His";
  const double bmi = b.bmi();
  std::string category = bmi < 18.5 ? "underweight"
                         : bmi < 25.0 ? "normal weight"
                         : bmi < 30.0 ? "overweight"
                                      : "obesity";
  std::string s = "Patient ID " + std::string(patient_id) + " is a " + format_value(b.age_years, 1) +
                  "-year-old " + b.sex + ", weighing " + format_value(b.weight_kg, 1) +
                  "kg and standing at " + format_value(b.height_cm, 1) +
                  "cm tall, with a BMI of " + format_value(bmi, 2) + ", indicating " + category +
                  " and a body surface area (BSA) of " + format_value(b.bsa(), 2) + " m2.";
  if (b.history.empty()) {
    s += " The patient has no recorded medical history.";
  } else {
    s += " The patient has a history of ";
    for (std::size_t i = 0; i < b.history.size(); ++i) {
      if (i) s += ", ";
      s += b.history[i];
    }
    s += '.';
  }
  s += std::string(" The patient has ") + (b.smoking ? "a" : "no") + " smoking and " +
       (b.drinking ? "a" : "no") + " drinking habit, and " + subj + " has " + b.insurance +
       " insurance coverage.";
  s += " " + Subj + " resides in the " + b.region + " region and is " + b.marital_status + ".";
  s += " " + Poss + " ICU type is " + b.icu_type + ".";
  return s;
}

}  // namespace organsim

#include <algorithm>
#include <set>

#include "organsim/grammar.hpp"
#include "organsim/numfmt.hpp"

namespace organsim {

namespace {

struct Line {
  std::string_view raw;
  std::string_view text;  // trimmed
  int number = 0;
};

std::vector<Line> lines_of(std::string_view text) {
  std::vector<Line> out;
  int n = 0;
  for (auto l : split_lines(text)) {
    ++n;
    out.push_back({l, trim(l), n});
  }
  return out;
}

[[noreturn]] void fail(ViolationKind kind, int line, std::string msg) {
  throw GrammarError(Violation{kind, line, std::move(msg)});
}

std::string opener(std::string_view tag) { return "<" + std::string(tag) + ">"; }

bool is_closer(std::string_view t, std::string_view tag) {
  if (t.size() != tag.size() + 3 || t.front() != '<' || t.back() != '>') return false;
  return (t[1] == '/' || t[1] == '\\') && t.substr(2, tag.size()) == tag;
}

// Lines strictly between `<tag>` and its closer. Blank lines are dropped.
std::vector<Line> block_body(std::string_view text, std::string_view tag) {
  const auto lines = lines_of(text);
  const std::string open = opener(tag);
  std::size_t i = 0;
  while (i < lines.size() && lines[i].text != open) ++i;
  if (i == lines.size()) fail(ViolationKind::Structural, 0, "missing " + open + " block");
  const int open_line = lines[i].number;
  std::vector<Line> body;
  for (++i; i < lines.size(); ++i) {
    if (is_closer(lines[i].text, tag)) return body;
    if (!lines[i].text.empty()) body.push_back(lines[i]);
  }
  fail(ViolationKind::Structural, open_line, open + " block is not closed");
}

// "Name: rest" split at the last ": ". Returns false when there is no separator.
bool split_entry(std::string_view t, std::string_view& name, std::string_view& rest) {
  const auto pos = t.rfind(": ");
  if (pos == std::string_view::npos) return false;
  name = trim(t.substr(0, pos));
  rest = trim(t.substr(pos + 2));
  return !name.empty();
}

// Parses "[a, b, ...]" (or "(a, b)" with the matching delimiters). Entries may
// be "null" only when `allow_null` is set.
bool parse_list(std::string_view s, char open, char close, bool allow_null,
                std::vector<std::optional<double>>& out) {
  out.clear();
  if (s.size() < 2 || s.front() != open || s.back() != close) return false;
  std::string_view inner = trim(s.substr(1, s.size() - 2));
  if (inner.empty()) return true;
  std::size_t pos = 0;
  while (true) {
    const auto comma = inner.find(',', pos);
    const auto item = trim(inner.substr(pos, comma == std::string_view::npos ? std::string_view::npos
                                                                              : comma - pos));
    if (item == "null") {
      if (!allow_null) return false;
      out.emplace_back(std::nullopt);
    } else {
      const auto v = parse_number(item);
      if (!v) return false;
      out.emplace_back(*v);
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return true;
}

bool parse_values(std::string_view s, std::vector<double>& out) {
  std::vector<std::optional<double>> tmp;
  if (!parse_list(s, '[', ']', false, tmp)) return false;
  out.clear();
  for (const auto& v : tmp) out.push_back(*v);
  return true;
}

const IndicatorInfo* lookup(std::string_view qualified) {
  return SystemTable::canonical().find_qualified(qualified);
}

SummaryRow parse_row(const Line& l) {
  const auto t = l.text;
  if (t.substr(0, 2) != "T=") fail(ViolationKind::Structural, l.number, "summary row must start with T=");
  const auto comma = t.find(',');
  if (comma == std::string_view::npos) fail(ViolationKind::Structural, l.number, "summary row has no events");
  SummaryRow row;
  row.time_label = std::string(trim(t.substr(2, comma - 2)));
  const auto time = parse_number(row.time_label);
  if (!time) fail(ViolationKind::Structural, l.number, "bad time label '" + row.time_label + "'");
  row.time_h = *time;

  static constexpr std::string_view kTokens[] = {" remain stable", " no change", " fluctuate",
                                                  " rise", " fall"};
  std::string_view rest = t.substr(comma + 1);
  while (true) {
    const auto semi = rest.find(';');
    if (semi == std::string_view::npos) {
      if (!trim(rest).empty()) {
        fail(ViolationKind::Structural, l.number, "event is not terminated by ';'");
      }
      break;
    }
    const auto piece = trim(rest.substr(0, semi));
    rest = rest.substr(semi + 1);
    if (piece.empty()) continue;
    const auto at = piece.rfind(" at ");
    if (at == std::string_view::npos) {
      fail(ViolationKind::Structural, l.number, "event '" + std::string(piece) + "' has no value");
    }
    const auto value = parse_number(piece.substr(at + 4));
    if (!value) fail(ViolationKind::Structural, l.number, "event value is not a number");
    const auto head = piece.substr(0, at);
    SymbolicEvent ev;
    bool matched = false;
    for (auto tok : kTokens) {
      if (head.size() > tok.size() && head.substr(head.size() - tok.size()) == tok) {
        ev.type = *parse_trend_token(tok.substr(1));
        ev.indicator = std::string(head.substr(0, head.size() - tok.size()));
        matched = true;
        break;
      }
    }
    if (!matched) {
      fail(ViolationKind::Structural, l.number, "unknown event type in '" + std::string(piece) + "'");
    }
    if (!lookup(ev.indicator)) {
      fail(ViolationKind::UnknownIndicator, l.number, "unknown indicator '" + ev.indicator + "'");
    }
    ev.time_h = row.time_h;
    ev.value = *value;
    row.events.push_back(std::move(ev));
  }
  return row;
}

bool is_footer(const Line& l) {
  return l.text.substr(0, 7) == "Please " && l.raw.size() > 4 && l.raw.substr(0, 4) == "    " &&
         l.raw[4] != ' ';
}

bool is_body(const Line& l) { return l.raw.substr(0, 8) == "        " && !l.text.empty(); }

}  // namespace

GrammarError::GrammarError(Violation v)
    : ValidationError((v.line ? "line " + std::to_string(v.line) + ": " : std::string()) +
                      v.message),
      violation_(std::move(v)) {}

std::string_view violation_kind_name(ViolationKind k) {
  switch (k) {
    case ViolationKind::Structural: return "structural";
    case ViolationKind::Range: return "range";
    case ViolationKind::UnknownIndicator: return "unknown_indicator";
    case ViolationKind::TargetSystemReference: return "target_system_reference";
  }
  return "";
}

ParsedSimulation parse_simulation_block(std::string_view text,
                                        std::span<const std::string> expected) {
  ParsedSimulation out;
  std::set<std::string, std::less<>> seen;
  for (const auto& l : block_body(text, "simulation")) {
    std::string_view name, rest;
    if (!split_entry(l.text, name, rest)) {
      fail(ViolationKind::Structural, l.number, "expected 'Indicator: (value, confidence)'");
    }
    if (!lookup(name)) {
      fail(ViolationKind::UnknownIndicator, l.number, "unknown indicator '" + std::string(name) + "'");
    }
    std::vector<std::optional<double>> tuple;
    if (!parse_list(rest, '(', ')', false, tuple) || tuple.size() != 2) {
      fail(ViolationKind::Structural, l.number, "expected a (value, confidence) pair");
    }
    const double c = *tuple[1];
    if (c < 0.0 || c > 1.0) {
      fail(ViolationKind::Range, l.number, "confidence " + format_compact(c, 6) + " outside [0, 1]");
    }
    if (!seen.insert(std::string(name)).second) {
      fail(ViolationKind::Structural, l.number, "duplicate indicator '" + std::string(name) + "'");
    }
    out.entries.push_back({std::string(name), *tuple[0], c});
  }
  if (!expected.empty()) {
    for (const auto& e : out.entries) {
      if (std::find(expected.begin(), expected.end(), e.indicator) == expected.end()) {
        fail(ViolationKind::Structural, 0, "unexpected indicator '" + e.indicator + "'");
      }
    }
    for (const auto& name : expected) {
      if (!seen.count(name)) fail(ViolationKind::Structural, 0, "missing indicator '" + name + "'");
    }
  }
  return out;
}

ReferenceParse parse_reference_block(std::string_view text, std::optional<System> target) {
  ReferenceParse out;
  std::set<std::string, std::less<>> seen;
  for (const auto& l : block_body(text, "reference")) {
    std::string_view name = l.text, rest;
    ReferenceEntry entry;
    if (split_entry(l.text, name, rest)) {
      if (!parse_values(rest, entry.values)) {
        out.violations.push_back({ViolationKind::Structural, l.number, "malformed value list"});
        continue;
      }
    }
    const auto* info = lookup(name);
    if (!info) {
      out.violations.push_back({ViolationKind::UnknownIndicator, l.number,
                                "unknown indicator '" + std::string(name) + "'"});
      continue;
    }
    if (target && info->system == *target) {
      out.violations.push_back({ViolationKind::TargetSystemReference, l.number,
                                "'" + std::string(name) + "' belongs to the target system"});
      continue;
    }
    if (!seen.insert(std::string(name)).second) {
      out.violations.push_back(
          {ViolationKind::Structural, l.number, "duplicate reference '" + std::string(name) + "'"});
      continue;
    }
    entry.indicator = std::string(name);
    out.entries.push_back(std::move(entry));
  }
  return out;
}

SummaryBlock parse_summary_rows(std::string_view text) {
  SummaryBlock out;
  for (const auto& l : block_body(text, "summary")) out.rows.push_back(parse_row(l));
  return out;
}

std::vector<SymbolicEvent> parse_summary_block(std::string_view text) {
  std::vector<SymbolicEvent> out;
  for (auto& r : parse_summary_rows(text).rows) {
    for (auto& e : r.events) out.push_back(std::move(e));
  }
  return out;
}

ResidualBlock parse_residual_block(std::string_view text) {
  ResidualBlock out;
  for (const auto& l : block_body(text, "residual")) {
    std::string_view name, rest;
    if (!split_entry(l.text, name, rest)) {
      fail(ViolationKind::Structural, l.number, "expected 'Indicator: (residual)'");
    }
    if (!lookup(name)) {
      fail(ViolationKind::UnknownIndicator, l.number, "unknown indicator '" + std::string(name) + "'");
    }
    std::vector<std::optional<double>> tuple;
    if (!parse_list(rest, '(', ')', true, tuple) || tuple.size() != 1) {
      fail(ViolationKind::Structural, l.number, "expected '(residual)' or '(null)'");
    }
    out.entries.push_back({std::string(name), tuple[0]});
  }
  return out;
}

StructuredPrompt parse_prompt(std::string_view text) {
  const auto lines = lines_of(text);
  StructuredPrompt p;
  bool have_reference = false;
  std::size_t i = 0;
  const auto skip_blank = [&] {
    while (i < lines.size() && lines[i].text.empty()) ++i;
  };
  const auto take_body = [&] {
    std::vector<Line> body;
    while (i < lines.size() && is_body(lines[i])) body.push_back(lines[i++]);
    return body;
  };
  const auto take_closer = [&](std::string_view tag, bool required) {
    if (i < lines.size() && is_closer(lines[i].text, tag)) {
      ++i;
    } else if (required) {
      fail(ViolationKind::Structural, i < lines.size() ? lines[i].number : 0,
           "<" + std::string(tag) + "> block is not closed");
    }
  };
  const auto& table = SystemTable::canonical();

  while (true) {
    skip_blank();
    if (i == lines.size()) fail(ViolationKind::Structural, 0, "prompt has no instruction footer");
    const Line& l = lines[i];
    if (is_footer(l)) {
      const auto t = l.text;
      if (t.starts_with("Please predict")) {
        p.kind = have_reference ? PromptKind::SimulatorStage2 : PromptKind::SimulatorStage1;
      } else if (t.starts_with("Please summarize")) {
        p.kind = PromptKind::Analyzer;
      } else if (t.starts_with("Please select")) {
        p.kind = PromptKind::Correlator;
      } else if (t.starts_with("Please provide residuals")) {
        p.kind = PromptKind::Compensator;
        const auto a = t.find("confidence < ");
        const auto b = a == std::string_view::npos ? a : t.find(')', a);
        if (b != std::string_view::npos) {
          if (auto g = parse_number(t.substr(a + 13, b - a - 13))) p.gate_threshold = *g;
        }
      } else {
        fail(ViolationKind::Structural, l.number, "unrecognised instruction");
      }
      break;
    }
    const auto t = l.text;
    ++i;
    if (t == "<baseinfo>") {
      std::string joined;
      for (const auto& b : take_body()) {
        if (!joined.empty() && joined.back() != ' ') joined += ' ';
        joined += b.raw.substr(8);
      }
      p.blocks.emplace_back(BaseInfoBlock{std::string(trim(joined))});
    } else if (t.starts_with("<system=") && t.back() == '>') {
      SystemWindowBlock w;
      const auto name = t.substr(8, t.size() - 9);
      const auto sys = table.parse_system(name);
      if (!sys) fail(ViolationKind::Structural, l.number, "unknown system '" + std::string(name) + "'");
      w.system = *sys;
      if (i == lines.size() || !lines[i].text.starts_with("<ICU Time=") ||
          !lines[i].text.ends_with("h>")) {
        fail(ViolationKind::Structural, l.number, "expected <ICU Time=a~bh> after <system>");
      }
      const auto span = lines[i].text.substr(10, lines[i].text.size() - 12);
      const auto tilde = span.find('~');
      const auto a = parse_number(span.substr(0, tilde));
      const auto b = tilde == std::string_view::npos ? std::nullopt : parse_number(span.substr(tilde + 1));
      if (!a || !b) fail(ViolationKind::Structural, lines[i].number, "malformed ICU time span");
      w.start_h = *a;
      w.end_h = *b;
      ++i;
      for (const auto& b2 : take_body()) {
        std::string_view name2, rest;
        NamedSeries s;
        if (!split_entry(b2.text, name2, rest) || !parse_values(rest, s.values)) {
          fail(ViolationKind::Structural, b2.number, "expected 'System.Indicator: [values]'");
        }
        const auto* info = lookup(name2);
        if (!info || info->system != w.system) {
          fail(ViolationKind::UnknownIndicator, b2.number,
               "'" + std::string(name2) + "' is not an indicator of " + std::string(name));
        }
        s.name = info->name;
        w.series.push_back(std::move(s));
      }
      p.blocks.emplace_back(std::move(w));
    } else if (t == "<treatment>") {
      TreatmentBlock tb;
      for (const auto& b : take_body()) {
        std::string_view name, rest;
        if (!b.text.starts_with("medcine.") || !split_entry(b.text, name, rest)) {
          fail(ViolationKind::Structural, b.number, "expected 'medcine.Drug: [hour, dose], ...'");
        }
        DrugCourse c;
        c.drug = std::string(name.substr(8));
        while (!rest.empty()) {
          const auto close = rest.find(']');
          std::vector<std::optional<double>> pair;
          if (rest.front() != '[' || close == std::string_view::npos ||
              !parse_list(rest.substr(0, close + 1), '[', ']', false, pair) || pair.size() != 2 ||
              *pair[0] != static_cast<double>(static_cast<long long>(*pair[0]))) {
            fail(ViolationKind::Structural, b.number, "malformed [hour, dose] pair");
          }
          c.doses.push_back({static_cast<long long>(*pair[0]), *pair[1]});
          rest = trim(rest.substr(close + 1));
          if (!rest.empty()) {
            if (rest.front() != ',') fail(ViolationKind::Structural, b.number, "expected ','");
            rest = trim(rest.substr(1));
          }
        }
        tb.courses.push_back(std::move(c));
      }
      p.blocks.emplace_back(std::move(tb));
    } else if (t == "<sum-his>" || t == "<summary>") {
      SummaryBlock sb;
      for (const auto& b : take_body()) sb.rows.push_back(parse_row(b));
      take_closer(t == "<sum-his>" ? "sum-his" : "summary", false);
      p.blocks.emplace_back(std::move(sb));
    } else if (t == "<candidate>") {
      CandidateBlock cb;
      for (const auto& b : take_body()) cb.entries.emplace_back(b.text);
      take_closer("candidate", true);
      p.blocks.emplace_back(std::move(cb));
    } else if (t == "<reference>") {
      ReferenceBlock rb;
      for (const auto& b : take_body()) {
        std::string_view name = b.text, rest;
        ReferenceEntry e;
        if (split_entry(b.text, name, rest) && !parse_values(rest, e.values)) {
          fail(ViolationKind::Structural, b.number, "malformed reference values");
        }
        e.indicator = std::string(name);
        rb.entries.push_back(std::move(e));
      }
      take_closer("reference", true);
      have_reference = true;
      p.blocks.emplace_back(std::move(rb));
    } else if (t == "<simulation>") {
      SimulationBlock sb;
      for (const auto& b : take_body()) {
        std::string_view name, rest;
        std::vector<std::optional<double>> tuple;
        if (!split_entry(b.text, name, rest) || !parse_list(rest, '(', ')', false, tuple) ||
            tuple.size() != 2) {
          fail(ViolationKind::Structural, b.number, "expected 'Indicator: (value, confidence)'");
        }
        sb.entries.push_back({std::string(name), *tuple[0], *tuple[1]});
      }
      take_closer("simulation", true);
      p.blocks.emplace_back(std::move(sb));
    } else if (t == "<res-his>") {
      ResidualHistoryBlock hb;
      for (const auto& b : take_body()) {
        std::string_view name, rest;
        ResidualHistoryRow r;
        if (!split_entry(b.text, name, rest) || !parse_list(rest, '[', ']', true, r.values)) {
          fail(ViolationKind::Structural, b.number, "expected 'Indicator: [residuals]'");
        }
        r.indicator = std::string(name);
        hb.rows.push_back(std::move(r));
      }
      // A repeated opener is tolerated as the closer.
      if (i < lines.size() && lines[i].text == "<res-his>") {
        ++i;
      } else {
        take_closer("res-his", true);
      }
      p.blocks.emplace_back(std::move(hb));
    } else {
      fail(ViolationKind::Structural, l.number, "unexpected line '" + std::string(t) + "'");
    }
  }
  if (!p.system_window()) fail(ViolationKind::Structural, 0, "prompt has no <system> block");
  return p;
}

std::optional<OutputKind> parse_output_kind(std::string_view name) {
  for (auto k : {OutputKind::Simulation, OutputKind::Summary, OutputKind::Reference,
                 OutputKind::Residual}) {
    if (output_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

std::string_view output_kind_name(OutputKind k) {
  switch (k) {
    case OutputKind::Simulation: return "simulation";
    case OutputKind::Summary: return "summary";
    case OutputKind::Reference: return "reference";
    case OutputKind::Residual: return "residual";
  }
  return "";
}

std::vector<Violation> validate_output(std::string_view text, OutputKind kind,
                                       std::span<const std::string> expected,
                                       std::optional<System> target) {
  try {
    switch (kind) {
      case OutputKind::Simulation: parse_simulation_block(text, expected); break;
      case OutputKind::Summary: parse_summary_rows(text); break;
      case OutputKind::Reference: return parse_reference_block(text, target).violations;
      case OutputKind::Residual: parse_residual_block(text); break;
    }
  } catch (const GrammarError& e) {
    return {e.violation()};
  }
  return {};
}

double structural_compliance(std::span<const std::string> outputs, OutputKind kind) {
  if (outputs.empty()) return 1.0;
  std::size_t ok = 0;
  for (const auto& o : outputs) ok += validate_output(o, kind).empty() ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(outputs.size());
}

}  // namespace organsim

#include "cpscode/rulecoder.hpp"

#include <fstream>
#include <sstream>

#include "cpscode/error.hpp"

namespace cpscode {

ActionVariant action_variant(const ActionEvent& event) {
  return std::visit(
      [](const auto& ev) {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, ChangeResistor>) {
          return ActionVariant::ChangeResistor;
        } else if constexpr (std::is_same_v<T, Calculate>) {
          return ActionVariant::Calculate;
        } else if constexpr (std::is_same_v<T, Submit>) {
          return ActionVariant::Submit;
        } else if constexpr (std::is_same_v<T, OpenZoom>) {
          return ActionVariant::OpenZoom;
        } else {
          return ActionVariant::ViewBoardInZoom;
        }
      },
      event);
}

std::string_view action_variant_name(ActionVariant variant) {
  switch (variant) {
    case ActionVariant::ChangeResistor: return "change_resistor";
    case ActionVariant::Calculate: return "calculate";
    case ActionVariant::Submit: return "submit";
    case ActionVariant::OpenZoom: return "open_zoom";
    case ActionVariant::ViewBoardInZoom: return "view_board_in_zoom";
  }
  return "?";
}

std::optional<ActionVariant> parse_action_variant(std::string_view name) {
  for (ActionVariant v :
       {ActionVariant::ChangeResistor, ActionVariant::Calculate,
        ActionVariant::Submit, ActionVariant::OpenZoom,
        ActionVariant::ViewBoardInZoom}) {
    if (action_variant_name(v) == name) return v;
  }
  return std::nullopt;
}

RuleTable RuleTable::defaults() {
  RuleTable table;
  for (PhaseState phase : {PhaseState::Exploring, PhaseState::PlanEstablished}) {
    table.set(ActionVariant::Submit, phase, CpsLabel::CM);
    table.set(ActionVariant::OpenZoom, phase, CpsLabel::CM);
    table.set(ActionVariant::ViewBoardInZoom, phase, CpsLabel::CM);
    table.set(ActionVariant::Calculate, phase, CpsLabel::CE);
  }
  table.set(ActionVariant::ChangeResistor, PhaseState::Exploring,
            CpsLabel::CEU);
  table.set(ActionVariant::ChangeResistor, PhaseState::PlanEstablished,
            CpsLabel::CE);
  return table;
}

RuleTable RuleTable::from_config(std::string_view text) {
  RuleTable table = defaults();
  std::istringstream in{std::string(text)};
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string variant_name, phase_name, label_name_str;
    if (!std::getline(fields, variant_name, '\t') ||
        !std::getline(fields, phase_name, '\t') ||
        !std::getline(fields, label_name_str, '\t')) {
      raise(ErrorCode::BadConfig, "rule table line " +
                                      std::to_string(line_no) +
                                      ": expected 3 tab-separated fields");
    }
    auto variant = parse_action_variant(variant_name);
    if (!variant) {
      raise(ErrorCode::BadConfig, "rule table line " +
                                      std::to_string(line_no) +
                                      ": unknown action \"" + variant_name +
                                      "\"");
    }
    auto label = parse_label(label_name_str);
    if (!label || !manipulation_eligible(*label)) {
      raise(ErrorCode::BadConfig,
            "rule table line " + std::to_string(line_no) +
                ": label must be one of CEU, CE, CM");
    }
    if (phase_name == "exploring") {
      table.set(*variant, PhaseState::Exploring, *label);
    } else if (phase_name == "plan_established") {
      table.set(*variant, PhaseState::PlanEstablished, *label);
    } else if (phase_name == "any") {
      table.set(*variant, PhaseState::Exploring, *label);
      table.set(*variant, PhaseState::PlanEstablished, *label);
    } else {
      raise(ErrorCode::BadConfig,
            "rule table line " + std::to_string(line_no) +
                ": phase must be exploring, plan_established or any");
    }
  }
  return table;
}

RuleTable RuleTable::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::IoError, "cannot open rule table: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_config(buf.str());
}

CpsLabel RuleTable::lookup(ActionVariant variant, PhaseState phase) const {
  return entries_.at({variant, phase});
}

void RuleTable::set(ActionVariant variant, PhaseState phase, CpsLabel label) {
  entries_[{variant, phase}] = label;
}

CpsLabel code_manipulation(const ActionEvent& event, const GroupPhase& phase,
                           const RuleTable& table) {
  return table.lookup(action_variant(event), phase.state);
}

GroupPhase update_phase(const GroupPhase& phase, const BehaviorRecord& record,
                        std::optional<CpsLabel> chat_label) {
  if (record.group_id != phase.group_id) {
    raise(ErrorCode::GroupMismatch,
          "record " + record.record_id + " belongs to group \"" +
              record.group_id + "\", phase tracks \"" + phase.group_id + "\"");
  }
  GroupPhase next = phase;
  next.as_of_ms = record.timestamp_ms;
  if (record.task_level != phase.task_level) {
    // Each level is a fresh problem; plans do not carry across.
    next.state = PhaseState::Exploring;
    next.task_level = record.task_level;
  }
  if (record.kind == RecordKind::Chat && chat_label &&
      *chat_label == CpsLabel::CP) {
    next.state = PhaseState::PlanEstablished;
  }
  return next;
}

}  // namespace cpscode

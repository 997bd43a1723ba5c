#pragma once
// Deterministic coding of manipulation events, with phase-dependent
// CE/CEU disambiguation for resistor changes.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "cpscode/record.hpp"

namespace cpscode {

enum class PhaseState { Exploring, PlanEstablished };

struct GroupPhase {
  PhaseState state = PhaseState::Exploring;
  std::string group_id;
  std::int64_t as_of_ms = 0;
  int task_level = 1;
};

enum class ActionVariant {
  ChangeResistor,
  Calculate,
  Submit,
  OpenZoom,
  ViewBoardInZoom,
};

ActionVariant action_variant(const ActionEvent& event);
std::string_view action_variant_name(ActionVariant variant);
std::optional<ActionVariant> parse_action_variant(std::string_view name);

// Total over (variant, phase); outputs restricted to {CEU, CE, CM}.
class RuleTable {
 public:
  // Submit/OpenZoom/ViewBoardInZoom -> CM; Calculate -> CE;
  // ChangeResistor -> CE when a plan is established, CEU while exploring.
  static RuleTable defaults();

  // `action_variant <TAB> phase <TAB> label` per line; phase is
  // exploring|plan_established|any. Unlisted pairs keep their defaults.
  static RuleTable from_config(std::string_view text);
  static RuleTable from_file(const std::string& path);

  CpsLabel lookup(ActionVariant variant, PhaseState phase) const;
  void set(ActionVariant variant, PhaseState phase, CpsLabel label);

 private:
  std::map<std::pair<ActionVariant, PhaseState>, CpsLabel> entries_;
};

CpsLabel code_manipulation(const ActionEvent& event, const GroupPhase& phase,
                           const RuleTable& table = RuleTable::defaults());

// Folds one record into the group's phase: a chat coded CP establishes the
// plan; a task-level change resets to Exploring. Throws GroupMismatch if
// the record belongs to another group.
GroupPhase update_phase(const GroupPhase& phase, const BehaviorRecord& record,
                        std::optional<CpsLabel> chat_label);

}  // namespace cpscode

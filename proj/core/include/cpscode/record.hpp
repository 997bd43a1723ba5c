#pragma once
// Behavior log data model: chat messages and system manipulations.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "cpscode/labels.hpp"

namespace cpscode {

struct ChangeResistor {
  int resistor_id = 0;  // 0..3
  double from_ohms = 0.0;
  double to_ohms = 0.0;
  bool operator==(const ChangeResistor&) const = default;
};

struct Calculate {
  std::string expression;
  bool operator==(const Calculate&) const = default;
};

struct Submit {
  bool operator==(const Submit&) const = default;
};

struct OpenZoom {
  bool operator==(const OpenZoom&) const = default;
};

struct ViewBoardInZoom {
  bool operator==(const ViewBoardInZoom&) const = default;
};

using ActionEvent =
    std::variant<ChangeResistor, Calculate, Submit, OpenZoom, ViewBoardInZoom>;

enum class RecordKind { Chat, Manipulation };

struct BehaviorRecord {
  std::string record_id;
  std::int64_t timestamp_ms = 0;
  std::string participant_id;
  std::string group_id;
  int task_level = 1;  // 1..4
  RecordKind kind = RecordKind::Chat;
  std::string text;          // chat records only
  ActionEvent event{Submit{}};  // manipulation records only
  std::optional<CpsLabel> gold_label;
  std::optional<CpsLabel> predicted_label;

  bool operator==(const BehaviorRecord&) const = default;
};

// Label/kind eligibility per the coding scheme: chat records carry chat
// subskills, manipulation records carry action subskills.
inline bool label_eligible_for_kind(CpsLabel label, RecordKind kind) {
  return kind == RecordKind::Chat ? chat_eligible(label)
                                  : manipulation_eligible(label);
}

}  // namespace cpscode

#pragma once
// The 11-subskill CPS taxonomy and its eligibility subsets.

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace cpscode {

// Closed label set. Seven cognitive subskills, four social ones.
enum class CpsLabel {
  CEU,   // exploring and understanding (manipulation)
  CRF,   // representing and formulating (chat)
  CP,    // planning (chat)
  CE,    // executing actions (manipulation)
  CEC,   // executing chats (chat)
  CM,    // monitoring actions (manipulation)
  CMC,   // monitoring chats (chat)
  SMC,   // maintaining communication (chat)
  SSI,   // sharing information (chat)
  SESU,  // establishing shared understanding (chat)
  SN,    // negotiating (chat)
};

enum class Dimension { Cognitive, Social };

inline constexpr int kNumLabels = 11;
inline constexpr int kNumChatLabels = 8;

// All labels, in declaration order.
constexpr std::array<CpsLabel, kNumLabels> all_labels() {
  return {CpsLabel::CEU, CpsLabel::CRF, CpsLabel::CP,   CpsLabel::CE,
          CpsLabel::CEC, CpsLabel::CM,  CpsLabel::CMC,  CpsLabel::SMC,
          CpsLabel::SSI, CpsLabel::SESU, CpsLabel::SN};
}

// Canonical chat label order; ties in argmax and votes resolve to the
// earliest entry here.
constexpr std::array<CpsLabel, kNumChatLabels> chat_labels() {
  return {CpsLabel::CRF, CpsLabel::CP,  CpsLabel::CEC,  CpsLabel::CMC,
          CpsLabel::SMC, CpsLabel::SSI, CpsLabel::SESU, CpsLabel::SN};
}

constexpr std::array<CpsLabel, 3> manipulation_labels() {
  return {CpsLabel::CEU, CpsLabel::CE, CpsLabel::CM};
}

Dimension dimension(CpsLabel label);
bool chat_eligible(CpsLabel label);
bool manipulation_eligible(CpsLabel label);

std::string_view label_name(CpsLabel label);
std::optional<CpsLabel> parse_label(std::string_view name);

// Position of `label` within chat_labels(); -1 if not chat-eligible.
int chat_label_index(CpsLabel label);
CpsLabel chat_label_at(int index);

}  // namespace cpscode

#include "cpscode/labels.hpp"

namespace cpscode {

Dimension dimension(CpsLabel label) {
  switch (label) {
    case CpsLabel::CEU:
    case CpsLabel::CRF:
    case CpsLabel::CP:
    case CpsLabel::CE:
    case CpsLabel::CEC:
    case CpsLabel::CM:
    case CpsLabel::CMC:
      return Dimension::Cognitive;
    case CpsLabel::SMC:
    case CpsLabel::SSI:
    case CpsLabel::SESU:
    case CpsLabel::SN:
      return Dimension::Social;
  }
  return Dimension::Cognitive;  // unreachable
}

bool chat_eligible(CpsLabel label) {
  switch (label) {
    case CpsLabel::CRF:
    case CpsLabel::CP:
    case CpsLabel::CEC:
    case CpsLabel::CMC:
    case CpsLabel::SMC:
    case CpsLabel::SSI:
    case CpsLabel::SESU:
    case CpsLabel::SN:
      return true;
    default:
      return false;
  }
}

bool manipulation_eligible(CpsLabel label) {
  return label == CpsLabel::CEU || label == CpsLabel::CE ||
         label == CpsLabel::CM;
}

std::string_view label_name(CpsLabel label) {
  switch (label) {
    case CpsLabel::CEU: return "CEU";
    case CpsLabel::CRF: return "CRF";
    case CpsLabel::CP: return "CP";
    case CpsLabel::CE: return "CE";
    case CpsLabel::CEC: return "CEC";
    case CpsLabel::CM: return "CM";
    case CpsLabel::CMC: return "CMC";
    case CpsLabel::SMC: return "SMC";
    case CpsLabel::SSI: return "SSI";
    case CpsLabel::SESU: return "SESU";
    case CpsLabel::SN: return "SN";
  }
  return "?";
}

std::optional<CpsLabel> parse_label(std::string_view name) {
  for (CpsLabel label : all_labels()) {
    if (label_name(label) == name) return label;
  }
  return std::nullopt;
}

int chat_label_index(CpsLabel label) {
  const auto order = chat_labels();
  for (int i = 0; i < kNumChatLabels; ++i) {
    if (order[static_cast<size_t>(i)] == label) return i;
  }
  return -1;
}

CpsLabel chat_label_at(int index) {
  return chat_labels()[static_cast<size_t>(index)];
}

}  // namespace cpscode

#pragma once
// Shared prediction surface for chat coders (prompt, finetune, n-gram).

#include <array>
#include <span>
#include <string>

#include "cpscode/labels.hpp"

namespace cpscode {

struct Prediction {
  CpsLabel label = CpsLabel::CRF;
  std::array<double, kNumChatLabels> scores{};  // canonical chat order
};

class ChatClassifier {
 public:
  virtual ~ChatClassifier() = default;
  virtual Prediction classify_text(const std::string& raw_text) const = 0;
};

// Argmax over canonical chat order; exact ties resolve to the earlier
// label.
CpsLabel argmax_chat_label(std::span<const double> scores);

}  // namespace cpscode

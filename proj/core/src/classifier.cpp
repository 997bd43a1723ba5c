#include "cpscode/classifier.hpp"

namespace cpscode {

CpsLabel argmax_chat_label(std::span<const double> scores) {
  size_t best = 0;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return chat_label_at(static_cast<int>(best));
}

}  // namespace cpscode

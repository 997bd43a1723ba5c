#pragma once
// Classification metrics: confusion matrices, accuracy, macro F1 and
// multi-class Cohen's kappa, plus the per-seed evaluation report.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cpscode/labels.hpp"

namespace cpscode {

// Rows are gold labels, columns are predictions.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<CpsLabel> labels);

  static ConfusionMatrix from_pairs(const std::vector<CpsLabel>& gold,
                                    const std::vector<CpsLabel>& predicted,
                                    std::vector<CpsLabel> labels);

  void add(CpsLabel gold, CpsLabel predicted, std::uint64_t count = 1);

  size_t num_labels() const { return labels_.size(); }
  const std::vector<CpsLabel>& labels() const { return labels_; }
  std::uint64_t count(size_t gold_idx, size_t pred_idx) const;
  std::uint64_t total() const;
  std::uint64_t row_sum(size_t gold_idx) const;
  std::uint64_t col_sum(size_t pred_idx) const;

  std::string to_csv() const;

 private:
  std::vector<CpsLabel> labels_;
  std::vector<std::uint64_t> counts_;  // row-major
  size_t index_of(CpsLabel label) const;
};

double accuracy(const ConfusionMatrix& cm);

// Unweighted mean of per-class F1 over every label in the matrix order.
// Classes with zero-denominator F1 contribute 0 rather than poisoning the
// mean; small subsamples can miss rare classes entirely.
double macro_f1(const ConfusionMatrix& cm);
std::vector<double> per_label_f1(const ConfusionMatrix& cm);

// Multi-class Cohen's kappa; returns 1.0 for perfect agreement even when
// chance agreement is also 1.
double kappa(const ConfusionMatrix& cm);

enum class KappaBand { BelowAcceptable, Acceptable, High, NearPerfect };
KappaBand kappa_band(double kappa_value);
std::string_view kappa_band_name(KappaBand band);

struct EvalReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double kappa = 0.0;
  ConfusionMatrix confusion;
  std::map<std::string, double> per_label_f1;
  std::uint32_t seed = 0;
  KappaBand kappa_band = KappaBand::BelowAcceptable;
};

EvalReport make_report(const ConfusionMatrix& cm, std::uint32_t seed);

}  // namespace cpscode

#include "cpscode/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "cpscode/error.hpp"

namespace cpscode {

ConfusionMatrix::ConfusionMatrix(std::vector<CpsLabel> labels)
    : labels_(std::move(labels)),
      counts_(labels_.size() * labels_.size(), 0) {}

ConfusionMatrix ConfusionMatrix::from_pairs(
    const std::vector<CpsLabel>& gold, const std::vector<CpsLabel>& predicted,
    std::vector<CpsLabel> labels) {
  if (gold.size() != predicted.size()) {
    raise(ErrorCode::LengthMismatch,
          "gold and predicted lists differ in length: " +
              std::to_string(gold.size()) + " vs " +
              std::to_string(predicted.size()));
  }
  ConfusionMatrix cm(std::move(labels));
  for (size_t i = 0; i < gold.size(); ++i) cm.add(gold[i], predicted[i]);
  return cm;
}

size_t ConfusionMatrix::index_of(CpsLabel label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) {
    raise(ErrorCode::LengthMismatch,
          "label " + std::string(label_name(label)) +
              " is not in the matrix label order");
  }
  return static_cast<size_t>(it - labels_.begin());
}

void ConfusionMatrix::add(CpsLabel gold, CpsLabel predicted,
                          std::uint64_t count) {
  counts_[index_of(gold) * labels_.size() + index_of(predicted)] += count;
}

std::uint64_t ConfusionMatrix::count(size_t gold_idx, size_t pred_idx) const {
  return counts_.at(gold_idx * labels_.size() + pred_idx);
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(size_t gold_idx) const {
  std::uint64_t sum = 0;
  for (size_t j = 0; j < labels_.size(); ++j) sum += count(gold_idx, j);
  return sum;
}

std::uint64_t ConfusionMatrix::col_sum(size_t pred_idx) const {
  std::uint64_t sum = 0;
  for (size_t i = 0; i < labels_.size(); ++i) sum += count(i, pred_idx);
  return sum;
}

std::string ConfusionMatrix::to_csv() const {
  std::string out = "gold\\pred";
  for (CpsLabel label : labels_) {
    out += ',';
    out += label_name(label);
  }
  out += '\n';
  for (size_t i = 0; i < labels_.size(); ++i) {
    out += label_name(labels_[i]);
    for (size_t j = 0; j < labels_.size(); ++j) {
      out += ',' + std::to_string(count(i, j));
    }
    out += '\n';
  }
  return out;
}

namespace {

void require_nonempty(const ConfusionMatrix& cm) {
  if (cm.num_labels() == 0 || cm.total() == 0) {
    raise(ErrorCode::EmptyMatrix, "confusion matrix has no counts");
  }
}

}  // namespace

double accuracy(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  std::uint64_t trace = 0;
  for (size_t i = 0; i < cm.num_labels(); ++i) trace += cm.count(i, i);
  return static_cast<double>(trace) / static_cast<double>(cm.total());
}

std::vector<double> per_label_f1(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  std::vector<double> f1s(cm.num_labels(), 0.0);
  for (size_t i = 0; i < cm.num_labels(); ++i) {
    const double tp = static_cast<double>(cm.count(i, i));
    const double fn = static_cast<double>(cm.row_sum(i)) - tp;
    const double fp = static_cast<double>(cm.col_sum(i)) - tp;
    const double denom = 2 * tp + fp + fn;
    f1s[i] = denom > 0 ? 2 * tp / denom : 0.0;
  }
  return f1s;
}

double macro_f1(const ConfusionMatrix& cm) {
  const auto f1s = per_label_f1(cm);
  return std::accumulate(f1s.begin(), f1s.end(), 0.0) /
         static_cast<double>(f1s.size());
}

double kappa(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  const double total = static_cast<double>(cm.total());
  std::uint64_t trace = 0;
  double chance = 0.0;
  for (size_t i = 0; i < cm.num_labels(); ++i) {
    trace += cm.count(i, i);
    chance += static_cast<double>(cm.row_sum(i)) *
              static_cast<double>(cm.col_sum(i));
  }
  const double p0 = static_cast<double>(trace) / total;
  const double pe = chance / (total * total);
  if (pe >= 1.0) return p0 >= 1.0 ? 1.0 : 0.0;
  return (p0 - pe) / (1.0 - pe);
}

KappaBand kappa_band(double kappa_value) {
  if (kappa_value >= 0.90) return KappaBand::NearPerfect;
  if (kappa_value >= 0.80) return KappaBand::High;
  if (kappa_value >= 0.60) return KappaBand::Acceptable;
  return KappaBand::BelowAcceptable;
}

std::string_view kappa_band_name(KappaBand band) {
  switch (band) {
    case KappaBand::BelowAcceptable: return "below_acceptable";
    case KappaBand::Acceptable: return "acceptable";
    case KappaBand::High: return "high";
    case KappaBand::NearPerfect: return "near_perfect";
  }
  return "?";
}

EvalReport make_report(const ConfusionMatrix& cm, std::uint32_t seed) {
  EvalReport report;
  report.accuracy = accuracy(cm);
  report.macro_f1 = macro_f1(cm);
  report.kappa = kappa(cm);
  report.confusion = cm;
  const auto f1s = per_label_f1(cm);
  for (size_t i = 0; i < cm.num_labels(); ++i) {
    report.per_label_f1[std::string(label_name(cm.labels()[i]))] = f1s[i];
  }
  report.seed = seed;
  report.kappa_band = kappa_band(report.kappa);
  return report;
}

}  // namespace cpscode

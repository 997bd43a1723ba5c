#include "cpscode/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "cpscode/error.hpp"

namespace cpscode {
namespace {

void validate_fractions(const SplitFractions& f) {
  const double sum = f.train + f.validation + f.test;
  if (f.train < 0 || f.validation < 0 || f.test < 0 ||
      std::abs(sum - 1.0) > 1e-6) {
    raise(ErrorCode::FractionsInvalid,
          "split fractions must be non-negative and sum to 1");
  }
}

// Stratum key: gold label name, or "" for unlabeled records. Sorted-key
// iteration keeps RNG consumption order independent of container internals.
std::string stratum_key(const BehaviorRecord& rec) {
  return rec.gold_label ? std::string(label_name(*rec.gold_label))
                        : std::string();
}

void append_sorted(std::vector<BehaviorRecord>& out,
                   const std::vector<BehaviorRecord>& records,
                   std::vector<size_t>& indices) {
  std::sort(indices.begin(), indices.end());
  for (size_t i : indices) out.push_back(records[i]);
}

}  // namespace

DatasetSplit split_dataset(const std::vector<BehaviorRecord>& records,
                           const SplitFractions& fractions,
                           std::uint32_t seed, const SplitOptions& options) {
  if (records.empty()) raise(ErrorCode::EmptyInput, "no records to split");
  validate_fractions(fractions);

  std::mt19937 rng(seed);
  std::vector<size_t> train_idx;
  std::vector<size_t> val_idx;
  std::vector<size_t> test_idx;

  if (options.by_group) {
    // Whole groups go to one partition; fill train, then validation.
    std::map<std::string, std::vector<size_t>> groups;
    for (size_t i = 0; i < records.size(); ++i) {
      groups[records[i].group_id].push_back(i);
    }
    std::vector<std::string> order;
    order.reserve(groups.size());
    for (const auto& [gid, _] : groups) order.push_back(gid);
    std::shuffle(order.begin(), order.end(), rng);

    const double n = static_cast<double>(records.size());
    const auto t1 = static_cast<size_t>(std::llround(fractions.train * n));
    const auto t2 = static_cast<size_t>(
        std::llround((fractions.train + fractions.validation) * n));
    for (const auto& gid : order) {
      auto& idx = groups[gid];
      if (train_idx.size() < t1) {
        train_idx.insert(train_idx.end(), idx.begin(), idx.end());
      } else if (train_idx.size() + val_idx.size() < t2) {
        val_idx.insert(val_idx.end(), idx.begin(), idx.end());
      } else {
        test_idx.insert(test_idx.end(), idx.begin(), idx.end());
      }
    }
  } else {
    std::map<std::string, std::vector<size_t>> strata;
    if (options.stratify) {
      for (size_t i = 0; i < records.size(); ++i) {
        strata[stratum_key(records[i])].push_back(i);
      }
    } else {
      auto& all = strata[""];
      all.resize(records.size());
      std::iota(all.begin(), all.end(), size_t{0});
    }
    for (auto& [key, idx] : strata) {
      std::shuffle(idx.begin(), idx.end(), rng);
      const double n = static_cast<double>(idx.size());
      auto t1 = static_cast<size_t>(std::llround(fractions.train * n));
      auto t2 = static_cast<size_t>(
          std::llround((fractions.train + fractions.validation) * n));
      t1 = std::min(t1, idx.size());
      t2 = std::min(std::max(t2, t1), idx.size());
      train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + t1);
      val_idx.insert(val_idx.end(), idx.begin() + t1, idx.begin() + t2);
      test_idx.insert(test_idx.end(), idx.begin() + t2, idx.end());
    }
  }

  DatasetSplit split;
  split.seed = seed;
  split.fractions = fractions;
  append_sorted(split.train, records, train_idx);
  append_sorted(split.validation, records, val_idx);
  append_sorted(split.test, records, test_idx);
  return split;
}

std::vector<BehaviorRecord> subsample_training(
    const std::vector<BehaviorRecord>& train, double fraction,
    std::uint32_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    raise(ErrorCode::FractionInvalid,
          "subsample fraction must be in (0, 1], got " +
              std::to_string(fraction));
  }
  const auto k = static_cast<size_t>(
      std::llround(fraction * static_cast<double>(train.size())));
  std::vector<size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::mt19937 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<BehaviorRecord> out;
  out.reserve(k);
  for (size_t i : idx) out.push_back(train[i]);
  return out;
}

}  // namespace cpscode

#pragma once
// Deterministic dataset splitting and training-set subsampling.

#include <array>
#include <cstdint>
#include <vector>

#include "cpscode/record.hpp"

namespace cpscode {

struct SplitFractions {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

struct DatasetSplit {
  std::vector<BehaviorRecord> train;
  std::vector<BehaviorRecord> validation;
  std::vector<BehaviorRecord> test;
  std::uint32_t seed = 0;
  SplitFractions fractions;
};

struct SplitOptions {
  // Stratified by gold label by default; the chat label distribution is
  // imbalanced enough that unstratified small splits can drop classes.
  bool stratify = true;
  // Optional group-level splitting for leakage-sensitive studies: whole
  // groups are assigned to one partition.
  bool by_group = false;
};

// Deterministic for a fixed seed. Partitions are disjoint, their union is
// the input, and per-label train share stays within +-1 record of
// fraction * per-label count under stratification.
DatasetSplit split_dataset(const std::vector<BehaviorRecord>& records,
                           const SplitFractions& fractions,
                           std::uint32_t seed,
                           const SplitOptions& options = {});

// Samples round(fraction * |train|) records without replacement,
// preserving the original order of the kept records (fraction 1.0 is the
// identity).
std::vector<BehaviorRecord> subsample_training(
    const std::vector<BehaviorRecord>& train, double fraction,
    std::uint32_t seed);

}  // namespace cpscode

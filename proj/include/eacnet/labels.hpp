#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "eacnet/error.hpp"
#include "eacnet/geometry.hpp"

namespace eacnet {

inline constexpr std::size_t kNumAUs = geometry::kActionUnits.size();

/// 12 binary AU labels ordered 1,2,4,6,7,10,12,14,15,17,23,24.
using LabelVector = std::array<int, kNumAUs>;

/// Position of an AU id in LabelVector order.
inline std::size_t au_index(int au) {
  for (std::size_t i = 0; i < kNumAUs; ++i)
    if (geometry::kActionUnits[i] == au) return i;
  throw ValidationError("AU " + std::to_string(au) + " is not one of the 12 detected AUs");
}

/// The less frequent AUs whose sampling rate is boosted during training.
inline constexpr std::array<int, 6> kMinorityAUs = {1, 2, 4, 15, 23, 24};

inline bool is_minority(int au) {
  for (int m : kMinorityAUs)
    if (m == au) return true;
  return false;
}

/// BP4D occurrence statistics for the 12 AUs: overall rates, rates among
/// samples where at least one minority AU occurs, and the rates reached
/// after rebalanced sampling.
namespace reference {
inline constexpr std::array<double, kNumAUs> kOccurrence = {0.24, 0.18, 0.23, 0.44, 0.52, 0.58,
                                                            0.57, 0.43, 0.15, 0.36, 0.19, 0.16};
inline constexpr std::array<double, kNumAUs> kMinorityConditional = {
    0.56, 0.43, 0.40, 0.47, 0.57, 0.64, 0.59, 0.56, 0.35, 0.58, 0.46, 0.39};
inline constexpr std::array<double, kNumAUs> kBalanced = {0.39, 0.32, 0.33, 0.45, 0.54, 0.60,
                                                          0.56, 0.49, 0.30, 0.50, 0.33, 0.30};
}  // namespace reference

inline std::vector<int> to_row(const LabelVector& l) { return {l.begin(), l.end()}; }

}  // namespace eacnet

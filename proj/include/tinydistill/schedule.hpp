// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "tinydistill/error.hpp"

namespace td {

/// Linear warmup from 0 to peak over `warmup` steps, then cosine decay to
/// `min` at `total`.
inline double cosine_lr(std::uint64_t step, std::uint64_t warmup, std::uint64_t total,
                        double peak, double min) {
  check(step <= total, "cosine_lr: step " + std::to_string(step) +
                           " beyond total " + std::to_string(total));
  check(warmup < total || total == 0, "cosine_lr: warmup must be below total");
  check(peak >= min && min > 0.0, "cosine_lr: require peak >= min > 0");
  if (step < warmup)
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return peak;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total - warmup);
  constexpr double kPi = 3.14159265358979323846;
  return min + 0.5 * (peak - min) * (1.0 + std::cos(kPi * progress));
}

} // namespace td

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <tuple>
#include <vector>

#include "coloc/predictor.hpp"

namespace coloc::testing {

struct Candidate {
  int infer = 0;
  int ft = 0;
  double predicted = 0.0;
};

/// Exhaustive search over the partition grid, written straight from the
/// selection rule: collect every feasible pair with a finetune share, then
/// order by (ft desc, predicted desc, infer asc). Latency is recomputed from
/// the raw coefficients rather than through predict_colo.
inline Candidate brute_force_plan(const SoloModel& solo, const ColoModel& colo, int bs,
                                  double seqlen, double budget, int steps) {
  std::vector<Candidate> feasible;
  const double b = std::max(bs, solo.pad_bs());
  for (int i = 1; i <= steps; ++i) {
    for (int f = 1; i + f <= steps; ++f) {
      const auto& c = solo.at(i);
      const double base = b * c.b0 + c.c0 + b * c.k0 * seqlen;
      const double s = static_cast<double>(i) / steps;
      const double fr = static_cast<double>(f) / steps;
      const double factor = std::max(1.0, s * colo.b1 + fr * colo.k1);
      const double pred = factor * base;
      if (pred <= budget) feasible.push_back({i, f, pred});
    }
  }
  if (feasible.empty()) return {steps, 0, 0.0};
  std::sort(feasible.begin(), feasible.end(), [](const Candidate& a, const Candidate& b) {
    return std::make_tuple(-a.ft, -a.predicted, a.infer) <
           std::make_tuple(-b.ft, -b.predicted, b.infer);
  });
  return feasible.front();
}

}  // namespace coloc::testing

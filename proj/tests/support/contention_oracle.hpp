// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace coloc::testing {

/// Time-sliced proportional-sharing simulation of two tasks on one memory
/// channel. Inference has a fixed amount of traffic to move; each slice both
/// tasks ask for their demand rate, and when the channel is oversubscribed it
/// serves them in proportion to what they asked for. Returns the ratio of the
/// co-run completion time to the solo completion time.
inline double sliced_slowdown(double f_infer, double f_ft, double capacity, int slices = 10000) {
  // Solo, the job takes exactly `slices` slices of length 1.
  const double work = f_infer * slices;
  auto run = [&](double ft) {
    double done = 0.0;
    double t = 0.0;
    while (true) {
      const double ask_i = f_infer;
      const double ask_f = ft;
      const double total = ask_i + ask_f;
      const double served = total <= capacity ? ask_i : capacity * ask_i / total;
      if (done + served >= work) {
        t += (work - done) / served;
        return t;
      }
      done += served;
      t += 1.0;
    }
  };
  return run(f_ft) / run(0.0);
}

}  // namespace coloc::testing

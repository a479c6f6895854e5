// SPDX-License-Identifier: Apache-2.0
#include "coloc/core.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace coloc {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Construction: return "construction";
    case ErrorKind::CapacityExhausted: return "capacity-exhausted";
    case ErrorKind::InvalidRelease: return "invalid-release";
    case ErrorKind::InvalidHandle: return "invalid-handle";
    case ErrorKind::OutOfMemory: return "out-of-memory";
    case ErrorKind::Fit: return "fit";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

void GpuSpec::validate() const {
  if (sm_count < 10) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("sm_count must be >= 10, got {}", sm_count));
  }
  if (warps_per_sm <= 0 || mem_bytes == 0 || !(hbm_bandwidth > 0.0) ||
      !(h2d_bandwidth > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "GpuSpec fields must be positive");
  }
}

void ModelSpec::validate() const {
  if (layer_count < 1) {
    throw Error(ErrorKind::InvalidArgument, "layer_count must be >= 1");
  }
  if (kv_bytes_per_token_layer == 0 || frozen_bytes_per_layer == 0) {
    throw Error(ErrorKind::InvalidArgument,
                "kv_bytes_per_token_layer and frozen_bytes_per_layer must be > 0");
  }
  if (trainable_bytes_per_layer >= frozen_bytes_per_layer) {
    throw Error(ErrorKind::InvalidArgument,
                "trainable bytes must be far smaller than frozen bytes");
  }
}

void QosTarget::validate() const {
  if (!(tpot_ms > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "tpot_ms must be > 0");
  }
}

SmPartition::SmPartition(int infer_units, int ft_units, int steps)
    : infer_(infer_units), ft_(ft_units), steps_(steps) {
  if (steps_ < 1 || infer_ < 1 || ft_ < 0 || infer_ + ft_ > steps_) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("invalid SM partition {}/{} + {}/{}", infer_, steps_,
                            ft_, steps_));
  }
}

SmPartition SmPartition::from_fractions(double infer_frac, double ft_frac, int steps) {
  const double iu = infer_frac * steps;
  const double fu = ft_frac * steps;
  const auto ir = std::lround(iu);
  const auto fr = std::lround(fu);
  if (std::abs(iu - static_cast<double>(ir)) > 1e-6 ||
      std::abs(fu - static_cast<double>(fr)) > 1e-6) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("SM fractions ({}, {}) are off the 1/{} grid", infer_frac,
                            ft_frac, steps));
  }
  return {static_cast<int>(ir), static_cast<int>(fr), steps};
}

Utilization aggregate_utilization(std::span<const KernelSample> kernels) {
  if (kernels.empty()) {
    throw Error(ErrorKind::InvalidInput, "aggregate_utilization: empty kernel list");
  }
  double total = 0.0;
  for (const auto& k : kernels) {
    if (k.duration_ms < 0.0 || k.sm_util < 0.0 || k.sm_util > 1.0 ||
        k.dram_util < 0.0 || k.dram_util > 1.0) {
      throw Error(ErrorKind::InvalidInput, "aggregate_utilization: sample out of range");
    }
    total += k.duration_ms;
  }
  if (!(total > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "aggregate_utilization: total duration is zero");
  }
  Utilization u;
  for (const auto& k : kernels) {
    const double weight = k.duration_ms / total;
    u.sm_util += k.sm_util * weight;
    u.dram_util += k.dram_util * weight;
  }
  // Rounding can push a weighted mean of values in [0,1] a hair outside.
  u.sm_util = std::clamp(u.sm_util, 0.0, 1.0);
  u.dram_util = std::clamp(u.dram_util, 0.0, 1.0);
  return u;
}

std::int64_t estimate_warp_demand(std::int64_t m, std::int64_t n) {
  if (m < 1 || n < 1) {
    throw Error(ErrorKind::InvalidArgument, "estimate_warp_demand: m and n must be >= 1");
  }
  return ((m + 15) / 16) * ((n + 15) / 16);
}

std::int64_t warp_capacity(const GpuSpec& gpu) {
  return static_cast<std::int64_t>(gpu.sm_count) * gpu.warps_per_sm;
}

}  // namespace coloc

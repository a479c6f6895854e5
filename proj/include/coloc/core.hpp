// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace coloc {

enum class ErrorKind {
  InvalidInput,
  InvalidArgument,
  Construction,
  CapacityExhausted,
  InvalidRelease,
  InvalidHandle,
  OutOfMemory,
  Fit,
  Parse,
  Io,
};

const char* to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` says which contract failed.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

constexpr std::uint64_t kKiB = 1024;
constexpr std::uint64_t kMiB = 1024 * kKiB;
constexpr std::uint64_t kGiB = 1024 * kMiB;

struct GpuSpec {
  int sm_count = 142;
  int warps_per_sm = 32;
  std::uint64_t mem_bytes = 48 * kGiB;
  double hbm_bandwidth = 960e9;  // bytes/s
  double h2d_bandwidth = 25e9;   // bytes/s

  void validate() const;
};

struct ModelSpec {
  int layer_count = 32;
  int hidden_dim = 4096;
  std::uint64_t kv_bytes_per_token_layer = 2 * kKiB;
  std::uint64_t frozen_bytes_per_layer = 430 * kMiB;
  std::uint64_t trainable_bytes_per_layer = 1 * kMiB;
  std::uint64_t activation_bytes_per_sample_layer = 40 * kMiB;

  /// KV bytes one token occupies across every layer.
  std::uint64_t kv_bytes_per_token() const {
    return kv_bytes_per_token_layer * static_cast<std::uint64_t>(layer_count);
  }
  void validate() const;
};

struct QosTarget {
  double tpot_ms = 40.0;
  void validate() const;
};

/// SM shares on a discrete grid. Shares are stored as integer grid units so
/// that equality and enumeration are exact; `steps` units make up the GPU.
class SmPartition {
 public:
  SmPartition() = default;
  SmPartition(int infer_units, int ft_units, int steps = 10);

  static SmPartition from_fractions(double infer_frac, double ft_frac, int steps = 10);
  static SmPartition full_inference(int steps = 10) { return {steps, 0, steps}; }

  int infer_units() const { return infer_; }
  int ft_units() const { return ft_; }
  int steps() const { return steps_; }
  double infer_frac() const { return static_cast<double>(infer_) / steps_; }
  double ft_frac() const { return static_cast<double>(ft_) / steps_; }

  friend bool operator==(const SmPartition&, const SmPartition&) = default;

 private:
  int infer_ = 10;
  int ft_ = 0;
  int steps_ = 10;
};

struct KernelSample {
  double sm_util = 0.0;
  double dram_util = 0.0;
  double duration_ms = 0.0;
};

struct Utilization {
  double sm_util = 0.0;
  double dram_util = 0.0;
};

/// Duration-weighted mean of per-kernel SM and DRAM utilization.
Utilization aggregate_utilization(std::span<const KernelSample> kernels);

/// Warps needed for an M x N GEMM output tiled into 16x16 tensor-core tiles,
/// one warp per tile. Partial tiles are padded, so dimensions round up.
std::int64_t estimate_warp_demand(std::int64_t m, std::int64_t n);

std::int64_t warp_capacity(const GpuSpec& gpu);

}  // namespace coloc

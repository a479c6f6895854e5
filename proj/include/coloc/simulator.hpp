// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coloc/core.hpp"
#include "coloc/oracle.hpp"
#include "coloc/predictor.hpp"
#include "coloc/scheduler.hpp"
#include "coloc/workload.hpp"

namespace coloc {

enum class SimMode { Adaptive, Separate, Static };

const char* to_string(SimMode m);
SimMode parse_mode(const std::string& s);

struct StaticSplit {
  int infer_sm_units = 6;
  int ft_sm_units = 4;
  /// Share of pool chunks the KV cache may hold; the rest goes to finetuning.
  double infer_mem_frac = 0.6;
};

struct SimConfig {
  GpuSpec gpu;
  ModelSpec model_infer;
  ModelSpec model_ft;
  QosTarget qos;
  SimMode mode = SimMode::Adaptive;
  int gpus = 2;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
  int grid_steps = 10;
  double headroom = 0.05;
  bool hysteresis = true;
  OracleParams oracle;
  FinetuneSpec finetune;
  bool finetune_enabled = true;
  std::uint64_t small_pool_bytes = 4 * kGiB;
  /// Inference weights and activations, held outside the pool.
  std::uint64_t infer_static_bytes = 16 * kGiB;
  /// Finetune state that never leaves the device (adapters, optimizer,
  /// activations). Negative derives it from the finetune model.
  std::int64_t ft_pinned_bytes = -1;
  /// Batch size used to size the KV reserve.
  int max_bs = 64;
  StaticSplit static_split;
  bool check_invariants = false;
  bool log_steps = true;

  void validate() const;
  /// Oracle parameters with derived defaults filled in.
  OracleParams resolved_oracle() const;
  std::uint64_t resolved_pinned_bytes() const;
};

struct SmSample {
  double t_ms = 0.0;
  int device = 0;
  double infer_frac = 0.0;
  double ft_frac = 0.0;
};

struct MemSample {
  double t_ms = 0.0;
  int device = 0;
  int kv_chunks = 0;
  int tensor_chunks = 0;
  int window = 0;
};

struct WindowEvent {
  double t_ms = 0.0;
  int device = 0;
  /// Chunks the KV cache needs for admitted and waiting requests.
  int kv_chunks = 0;
  int window = 0;
};

struct Metrics {
  /// One sample per decoded token.
  std::vector<double> tpot_samples;
  std::uint64_t qos_violations = 0;
  std::uint64_t finetune_units_done = 0;
  /// Samples per second across all finetuning devices.
  double finetune_throughput = 0.0;
  int micro_bs = 0;
  std::vector<SmSample> sm_timeline;
  std::vector<MemSample> mem_timeline;
  std::uint64_t swap_count = 0;
  std::uint64_t bytes_moved = 0;
  std::uint64_t admitted = 0;
  std::uint64_t completed = 0;
  std::uint64_t dropped = 0;
  double elapsed_ms = 0.0;
  double stall_ms = 0.0;
  std::uint64_t decode_steps = 0;
};

struct SimResult {
  Metrics metrics;
  /// CSV `t_ms,kind,detail`.
  std::string event_log;
  /// Per device, CSV `t_ms,reason,infer_frac,ft_frac,predicted_ms`.
  std::vector<std::string> decision_logs;
  std::vector<WindowEvent> window_events;
};

/// Replays `trace` on `cfg.gpus` simulated devices. Adaptive mode needs fitted
/// models; the other modes ignore them.
SimResult run(const SimConfig& cfg, std::span<const Request> trace,
              const ModelBundle* models = nullptr);

/// Generates oracle profiles for `cfg` and fits both latency models.
ModelBundle fit_models(const SimConfig& cfg, const ProfileGrid& grid, double profile_noise_sigma,
                       std::uint64_t seed, std::vector<ProfilePoint>* profiles_out = nullptr);

/// Frozen layers that fit in `chunks` tensor chunks given how one layer is
/// cut into chunk-sized pieces.
int layers_fitting(int chunks, std::uint64_t frozen_bytes, std::uint64_t chunk_bytes);

/// Nearest-rank percentile of an unsorted sample; q in [0, 1].
double percentile(std::vector<double> samples, double q);

}  // namespace coloc

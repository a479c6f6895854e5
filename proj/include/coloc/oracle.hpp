// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "coloc/core.hpp"
#include "coloc/predictor.hpp"

namespace coloc {

/// Ground-truth decode timing used in place of hardware.
///
/// Solo latency is roofline-style: the slower of a compute term and a memory
/// term, each divided by how fast that resource runs at the granted SM share.
/// Both speedups follow s / (s + alpha * (1 - s)), normalized to 1 at s = 1;
/// a few SMs cannot issue enough loads to saturate HBM, hence the separate
/// (larger) bandwidth alpha. Co-running finetune work adds memory demand and
/// slows decode by proportional bandwidth sharing.
struct OracleParams {
  double weight_bytes_read_per_step = 16e9;
  double compute_fixed_ms = 2.0;
  double compute_per_request_ms = 0.05;
  double compute_per_token_ms = 3e-5;
  int pad_bs = 4;
  double compute_alpha = 0.15;
  double bandwidth_alpha = 0.5;
  /// Bytes a finetune unit moves through HBM; 0 derives a default from the
  /// finetune model (see default_ft_bytes_per_unit).
  double ft_bytes_per_unit = 0.0;
  /// Duration of one finetune unit at the full GPU.
  double ft_unit_ms_full_sm = 10.0;

  void validate() const;
};

/// Finetune HBM traffic per unit: `multiplier` passes over the frozen layer
/// plus the micro-batch's activations (forward re-reads, recompute and
/// gradient traffic).
double default_ft_bytes_per_unit(const ModelSpec& ft_model, int micro_bs,
                                 double multiplier = 13.0);

double compute_speedup(const OracleParams& p, double sm_frac);
double bandwidth_speedup(const OracleParams& p, double sm_frac);

double oracle_memory_ms(const OracleParams& p, const GpuSpec& gpu, const ModelSpec& model,
                        int bs, double seqlen);
double oracle_compute_ms(const OracleParams& p, int bs, double seqlen);
/// Solo decode step latency at `sm_frac`, noise free.
double oracle_solo_ms(const OracleParams& p, const GpuSpec& gpu, const ModelSpec& model, int bs,
                      double seqlen, double sm_frac);
/// Finetune HBM demand as a fraction of capacity at share `ft_frac`.
double oracle_ft_demand(const OracleParams& p, const GpuSpec& gpu, double ft_frac);
/// Bandwidth contention inputs for a co-run step, normalized to capacity 1.
ContentionParams oracle_contention(const OracleParams& p, const GpuSpec& gpu,
                                   const ModelSpec& model, int bs, double seqlen,
                                   const SmPartition& part);

/// Multiplicative lognormal noise source; sigma 0 returns exactly 1.
class Noise {
 public:
  Noise(double sigma, std::uint64_t seed) : sigma_(sigma), rng_(seed) {}
  double sample();
  double sigma() const { return sigma_; }

 private:
  double sigma_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

double oracle_decode_ms(const OracleParams& p, const GpuSpec& gpu, const ModelSpec& model, int bs,
                        double seqlen, const SmPartition& part, bool ft_active, Noise& noise);

struct ProfileGrid {
  std::vector<int> bs_list{4, 16, 64};
  int seqlen_max = 512;
  int solo_seqlen_step = 16;
  int colo_seqlen_step = 64;
  int grid_steps = 10;
};

/// Solo rows at every SM share and co-run rows at every (infer, ft) pair with
/// ft > 0, measured through the oracle.
std::vector<ProfilePoint> generate_profiles(const OracleParams& p, const GpuSpec& gpu,
                                            const ModelSpec& model, const ProfileGrid& grid,
                                            Noise& noise);

}  // namespace coloc

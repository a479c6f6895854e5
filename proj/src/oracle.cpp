// SPDX-License-Identifier: Apache-2.0
#include "coloc/oracle.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace coloc {

void OracleParams::validate() const {
  if (!(weight_bytes_read_per_step > 0.0) || compute_fixed_ms < 0.0 ||
      compute_per_request_ms < 0.0 || compute_per_token_ms < 0.0 || pad_bs < 1 ||
      compute_alpha < 0.0 || bandwidth_alpha < 0.0 || ft_bytes_per_unit < 0.0 ||
      !(ft_unit_ms_full_sm > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "oracle parameters out of range");
  }
}

double default_ft_bytes_per_unit(const ModelSpec& ft_model, int micro_bs, double multiplier) {
  return multiplier * (static_cast<double>(ft_model.frozen_bytes_per_layer) +
                       static_cast<double>(micro_bs) *
                           static_cast<double>(ft_model.activation_bytes_per_sample_layer));
}

namespace {

double speedup(double alpha, double s) {
  if (!(s > 0.0) || s > 1.0 + 1e-9) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("SM share {} outside (0, 1]", s));
  }
  return s / (s + alpha * (1.0 - s));
}

}  // namespace

double compute_speedup(const OracleParams& p, double sm_frac) {
  return speedup(p.compute_alpha, sm_frac);
}

double bandwidth_speedup(const OracleParams& p, double sm_frac) {
  return speedup(p.bandwidth_alpha, sm_frac);
}

double oracle_memory_ms(const OracleParams& p, const GpuSpec& gpu, const ModelSpec& model,
                        int bs, double seqlen) {
  const double bytes = p.weight_bytes_read_per_step +
                       bs * seqlen * static_cast<double>(model.kv_bytes_per_token());
  return bytes / gpu.hbm_bandwidth * 1000.0;
}

double oracle_compute_ms(const OracleParams& p, int bs, double seqlen) {
  const double b = std::max(bs, p.pad_bs);
  return p.compute_fixed_ms + p.compute_per_request_ms * b + p.compute_per_token_ms * b * seqlen;
}

double oracle_solo_ms(const OracleParams& p, const GpuSpec& gpu, const ModelSpec& model, int bs,
                      double seqlen, double sm_frac) {
  return std::max(oracle_compute_ms(p, bs, seqlen) / compute_speedup(p, sm_frac),
                  oracle_memory_ms(p, gpu, model, bs, seqlen) / bandwidth_speedup(p, sm_frac));
}

double oracle_ft_demand(const OracleParams& p, const GpuSpec& gpu, double ft_frac) {
  const double rate = p.ft_bytes_per_unit / (p.ft_unit_ms_full_sm / 1000.0);
  return std::min(1.0, ft_frac * rate / gpu.hbm_bandwidth);
}

ContentionParams oracle_contention(const OracleParams& p, const GpuSpec& gpu,
                                   const ModelSpec& model, int bs, double seqlen,
                                   const SmPartition& part) {
  const double solo = oracle_solo_ms(p, gpu, model, bs, seqlen, part.infer_frac());
  ContentionParams c;
  c.capacity = 1.0;
  c.f_infer = std::min(1.0, oracle_memory_ms(p, gpu, model, bs, seqlen) / solo);
  c.f_ft = oracle_ft_demand(p, gpu, part.ft_frac());
  return c;
}

double Noise::sample() {
  if (sigma_ == 0.0) return 1.0;
  return std::exp(sigma_ * normal_(rng_));
}

double oracle_decode_ms(const OracleParams& p, const GpuSpec& gpu, const ModelSpec& model, int bs,
                        double seqlen, const SmPartition& part, bool ft_active, Noise& noise) {
  double ms = oracle_solo_ms(p, gpu, model, bs, seqlen, part.infer_frac());
  if (ft_active && part.ft_units() > 0) {
    ms *= contention_slowdown(oracle_contention(p, gpu, model, bs, seqlen, part));
  }
  return ms * noise.sample();
}

std::vector<ProfilePoint> generate_profiles(const OracleParams& p, const GpuSpec& gpu,
                                            const ModelSpec& model, const ProfileGrid& grid,
                                            Noise& noise) {
  if (grid.bs_list.empty() || grid.seqlen_max < 0 || grid.solo_seqlen_step < 1 ||
      grid.colo_seqlen_step < 1 || grid.grid_steps < 1) {
    throw Error(ErrorKind::InvalidArgument, "profile grid is empty or malformed");
  }
  std::vector<ProfilePoint> out;
  const int steps = grid.grid_steps;
  for (int i = 1; i <= steps; ++i) {
    const SmPartition part(i, 0, steps);
    for (int bs : grid.bs_list) {
      for (int sl = 0; sl <= grid.seqlen_max; sl += grid.solo_seqlen_step) {
        out.push_back({part.infer_frac(), 0.0, bs, sl,
                       oracle_decode_ms(p, gpu, model, bs, sl, part, false, noise)});
      }
    }
  }
  for (int i = 1; i < steps; ++i) {
    for (int f = 1; i + f <= steps; ++f) {
      const SmPartition part(i, f, steps);
      for (int bs : grid.bs_list) {
        for (int sl = 0; sl <= grid.seqlen_max; sl += grid.colo_seqlen_step) {
          out.push_back({part.infer_frac(), part.ft_frac(), bs, sl,
                         oracle_decode_ms(p, gpu, model, bs, sl, part, true, noise)});
        }
      }
    }
  }
  return out;
}

}  // namespace coloc

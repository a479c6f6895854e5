// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coloc/core.hpp"

namespace coloc {

struct ProfilePoint {
  double sm_frac = 1.0;
  double ft_frac = 0.0;
  int bs = 1;
  int seqlen = 0;
  double latency_ms = 0.0;
};

/// Solo decode latency at one SM share: bs*b0 + c0 + bs*k0*seqlen.
struct SoloCoeffs {
  double b0 = 0.0;  // ms per request
  double c0 = 0.0;  // ms
  double k0 = 0.0;  // ms per request-token
};

/// Per-SM-share solo models on a fixed grid of `grid_steps` shares.
///
/// Batch sizes below `pad_bs` are treated as `pad_bs`: small batches are
/// padded up to the tensor-core tile, so their latency is flat.
class SoloModel {
 public:
  explicit SoloModel(int grid_steps = 10, int pad_bs = 4);

  int grid_steps() const { return grid_steps_; }
  int pad_bs() const { return pad_bs_; }
  int effective_bs(int bs) const { return bs < pad_bs_ ? pad_bs_ : bs; }
  /// Grid index of `sm_frac`; throws InvalidArgument when off grid.
  int units(double sm_frac) const;

  void set(int sm_units, SoloCoeffs c);
  bool has(int sm_units) const { return coeffs_.count(sm_units) != 0; }
  const SoloCoeffs& at(int sm_units) const;
  const std::map<int, SoloCoeffs>& coeffs() const { return coeffs_; }

 private:
  int grid_steps_;
  int pad_bs_;
  std::map<int, SoloCoeffs> coeffs_;
};

/// Co-location slowdown: factor = max(1, infer_frac*b1 + ft_frac*k1).
struct ColoModel {
  double b1 = 1.0;
  double k1 = 0.0;
};

struct ColoFitOptions {
  /// Rows whose measured slowdown is at most 1 + margin sit on the clamp
  /// floor and carry no information about the slope; they are left out.
  /// A negative margin keeps every row.
  double clamp_margin = 0.02;
};

/// Ordinary least squares per SM share over rows with ft_frac == 0.
SoloModel fit_solo(std::span<const ProfilePoint> points, int grid_steps = 10, int pad_bs = 4);
double predict_solo(const SoloModel& model, double sm_frac, int bs, double seqlen);

ColoModel fit_colo(std::span<const ProfilePoint> points, const SoloModel& solo,
                   const ColoFitOptions& options = {});
double colo_factor(const ColoModel& colo, const SmPartition& p);
double predict_colo(const ColoModel& colo, const SoloModel& solo, const SmPartition& p, int bs,
                    double seqlen);

/// Memory demand of the two tasks and the shared capacity, in any one unit.
struct ContentionParams {
  double f_infer = 0.0;
  double f_ft = 0.0;
  double capacity = 1.0;
};

/// Bandwidth each task receives under proportional sharing: (r_infer, r_ft).
std::pair<double, double> proportional_shares(const ContentionParams& p);
/// Inference slowdown: 1 when demand fits, else (f_infer + f_ft) / capacity.
double contention_slowdown(const ContentionParams& p);

struct FitSummary {
  /// Mean absolute relative error of predict_solo per SM share, on the rows used.
  std::map<int, double> solo_mape;
  double solo_mape_overall = 0.0;
  double solo_max_error = 0.0;
  std::optional<double> colo_mape;
  std::size_t solo_rows = 0;
  std::size_t colo_rows = 0;
};

FitSummary summarize_fit(std::span<const ProfilePoint> points, const SoloModel& solo,
                         const std::optional<ColoModel>& colo);

// Persistence -------------------------------------------------------------

std::vector<ProfilePoint> load_profiles(const std::string& path);
std::vector<ProfilePoint> parse_profiles(const std::string& text, const std::string& source);
std::string format_profiles(std::span<const ProfilePoint> points);

struct ModelBundle {
  SoloModel solo;
  std::optional<ColoModel> colo;
};

std::string models_to_json(const ModelBundle& models, const FitSummary* summary = nullptr);
ModelBundle models_from_json(const std::string& text, const std::string& source);
ModelBundle load_models(const std::string& path);

}  // namespace coloc

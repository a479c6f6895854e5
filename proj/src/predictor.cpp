// SPDX-License-Identifier: Apache-2.0
#include "coloc/predictor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "coloc/csv.hpp"

namespace coloc {

namespace {

/// Least squares through the normal equations with unit-norm column scaling,
/// which keeps the Gram matrix well conditioned for features of very
/// different magnitude. Returns nullopt when the design is rank deficient.
template <std::size_t N>
std::optional<std::array<double, N>> least_squares(const std::vector<std::array<double, N>>& x,
                                                   const std::vector<double>& y) {
  std::array<long double, N> scale{};
  for (const auto& row : x) {
    for (std::size_t j = 0; j < N; ++j) scale[j] += static_cast<long double>(row[j]) * row[j];
  }
  for (auto& s : scale) {
    if (s == 0.0L) return std::nullopt;
    s = std::sqrt(s);
  }
  std::array<std::array<long double, N + 1>, N> a{};
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      const long double xj = x[i][j] / scale[j];
      for (std::size_t k = 0; k < N; ++k) a[j][k] += xj * (x[i][k] / scale[k]);
      a[j][N] += xj * y[i];
    }
  }
  for (std::size_t col = 0; col < N; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < N; ++r) {
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    }
    if (std::fabs(a[piv][col]) < 1e-10L) return std::nullopt;
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < N; ++r) {
      if (r == col) continue;
      const long double f = a[r][col] / a[col][col];
      for (std::size_t k = col; k <= N; ++k) a[r][k] -= f * a[col][k];
    }
  }
  std::array<double, N> out{};
  for (std::size_t j = 0; j < N; ++j) {
    out[j] = static_cast<double>(a[j][N] / a[j][j] / scale[j]);
  }
  return out;
}

}  // namespace

SoloModel::SoloModel(int grid_steps, int pad_bs) : grid_steps_(grid_steps), pad_bs_(pad_bs) {
  if (grid_steps_ < 1 || pad_bs_ < 1) {
    throw Error(ErrorKind::InvalidArgument, "grid_steps and pad_bs must be >= 1");
  }
}

int SoloModel::units(double sm_frac) const {
  const double u = sm_frac * grid_steps_;
  const long r = std::lround(u);
  if (!std::isfinite(u) || std::abs(u - static_cast<double>(r)) > 1e-6 || r < 1 ||
      r > grid_steps_) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("SM share {} is not on the 1/{} grid", sm_frac, grid_steps_));
  }
  return static_cast<int>(r);
}

void SoloModel::set(int sm_units, SoloCoeffs c) {
  if (sm_units < 1 || sm_units > grid_steps_) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("grid index {} out of range", sm_units));
  }
  coeffs_[sm_units] = c;
}

const SoloCoeffs& SoloModel::at(int sm_units) const {
  auto it = coeffs_.find(sm_units);
  if (it == coeffs_.end()) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("no solo model fitted for SM share {}/{}", sm_units, grid_steps_));
  }
  return it->second;
}

SoloModel fit_solo(std::span<const ProfilePoint> points, int grid_steps, int pad_bs) {
  SoloModel model(grid_steps, pad_bs);
  std::map<int, std::vector<const ProfilePoint*>> groups;
  for (const auto& p : points) {
    if (p.ft_frac != 0.0) continue;
    if (p.bs < 1 || p.seqlen < 0 || !(p.latency_ms > 0.0)) {
      throw Error(ErrorKind::InvalidInput,
                  fmt::format("profile point (sm {}, bs {}, seqlen {}, {} ms) is invalid",
                              p.sm_frac, p.bs, p.seqlen, p.latency_ms));
    }
    groups[model.units(p.sm_frac)].push_back(&p);
  }
  if (groups.empty()) {
    throw Error(ErrorKind::Fit, "no solo profile rows (ft_frac == 0) to fit");
  }
  for (const auto& [u, rows] : groups) {
    std::vector<std::array<double, 3>> x;
    std::vector<double> y;
    for (const auto* p : rows) {
      const double b = model.effective_bs(p->bs);
      x.push_back({b, 1.0, b * p->seqlen});
      y.push_back(p->latency_ms);
    }
    auto sol = least_squares(x, y);
    if (!sol) {
      throw Error(ErrorKind::Fit,
                  fmt::format("solo fit at SM share {:.3g} is rank deficient: need at least two "
                              "effective batch sizes and a seqlen sweep ({} rows)",
                              static_cast<double>(u) / grid_steps, rows.size()));
    }
    model.set(u, {(*sol)[0], (*sol)[1], (*sol)[2]});
  }
  return model;
}

double predict_solo(const SoloModel& model, double sm_frac, int bs, double seqlen) {
  if (bs < 0 || !(seqlen >= 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "predict_solo needs bs >= 0 and seqlen >= 0");
  }
  const auto& c = model.at(model.units(sm_frac));
  const double b = model.effective_bs(bs);
  return b * c.b0 + c.c0 + b * c.k0 * seqlen;
}

ColoModel fit_colo(std::span<const ProfilePoint> points, const SoloModel& solo,
                   const ColoFitOptions& options) {
  struct Obs {
    double s, f, ratio;
  };
  std::vector<Obs> all;
  for (const auto& p : points) {
    if (p.ft_frac <= 0.0) continue;
    const double base = predict_solo(solo, p.sm_frac, p.bs, p.seqlen);
    all.push_back({p.sm_frac, p.ft_frac, p.latency_ms / base});
  }
  auto distinct_pairs = [&](const std::vector<Obs>& v) {
    std::set<std::pair<long, long>> seen;
    for (const auto& o : v) seen.emplace(std::lround(o.s * 1e6), std::lround(o.f * 1e6));
    return seen.size();
  };
  if (distinct_pairs(all) < 2) {
    throw Error(ErrorKind::Fit,
                "co-location fit needs rows from at least two (sm_frac, ft_frac) pairs");
  }
  std::vector<Obs> used;
  if (options.clamp_margin >= 0.0) {
    for (const auto& o : all) {
      if (o.ratio > 1.0 + options.clamp_margin) used.push_back(o);
    }
  }
  if (distinct_pairs(used) < 2) used = all;

  std::vector<std::array<double, 2>> x;
  std::vector<double> y;
  for (const auto& o : used) {
    x.push_back({o.s, o.f});
    y.push_back(o.ratio);
  }
  auto sol = least_squares(x, y);
  if (!sol) {
    throw Error(ErrorKind::Fit, "co-location fit is rank deficient (sm and ft shares collinear)");
  }
  return {(*sol)[0], (*sol)[1]};
}

double colo_factor(const ColoModel& colo, const SmPartition& p) {
  return std::max(1.0, p.infer_frac() * colo.b1 + p.ft_frac() * colo.k1);
}

double predict_colo(const ColoModel& colo, const SoloModel& solo, const SmPartition& p, int bs,
                    double seqlen) {
  return colo_factor(colo, p) * predict_solo(solo, p.infer_frac(), bs, seqlen);
}

std::pair<double, double> proportional_shares(const ContentionParams& p) {
  if (!(p.capacity > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "contention capacity must be > 0");
  }
  if (p.f_infer < 0.0 || p.f_ft < 0.0 || p.f_infer > p.capacity || p.f_ft > p.capacity) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("demands ({}, {}) must lie in [0, capacity {}]", p.f_infer, p.f_ft,
                            p.capacity));
  }
  const double total = p.f_infer + p.f_ft;
  if (total <= p.capacity) return {p.f_infer, p.f_ft};
  return {p.capacity * p.f_infer / total, p.capacity * p.f_ft / total};
}

double contention_slowdown(const ContentionParams& p) {
  const auto [r_infer, r_ft] = proportional_shares(p);
  (void)r_ft;
  const double total = p.f_infer + p.f_ft;
  if (total <= p.capacity) return 1.0;
  if (p.f_infer == 0.0) return total / p.capacity;
  return p.f_infer / r_infer;
}

FitSummary summarize_fit(std::span<const ProfilePoint> points, const SoloModel& solo,
                         const std::optional<ColoModel>& colo) {
  FitSummary s;
  std::map<int, std::pair<double, std::size_t>> acc;
  double total = 0.0;
  double colo_total = 0.0;
  for (const auto& p : points) {
    if (p.ft_frac == 0.0) {
      const double err = std::abs(predict_solo(solo, p.sm_frac, p.bs, p.seqlen) - p.latency_ms) /
                         p.latency_ms;
      auto& a = acc[solo.units(p.sm_frac)];
      a.first += err;
      ++a.second;
      total += err;
      s.solo_max_error = std::max(s.solo_max_error, err);
      ++s.solo_rows;
    } else if (colo) {
      const auto part = SmPartition::from_fractions(p.sm_frac, p.ft_frac, solo.grid_steps());
      colo_total += std::abs(predict_colo(*colo, solo, part, p.bs, p.seqlen) - p.latency_ms) /
                    p.latency_ms;
      ++s.colo_rows;
    }
  }
  for (const auto& [u, a] : acc) s.solo_mape[u] = a.first / static_cast<double>(a.second);
  if (s.solo_rows > 0) s.solo_mape_overall = total / static_cast<double>(s.solo_rows);
  if (colo && s.colo_rows > 0) s.colo_mape = colo_total / static_cast<double>(s.colo_rows);
  return s;
}

std::vector<ProfilePoint> parse_profiles(const std::string& text, const std::string& source) {
  std::vector<ProfilePoint> out;
  for (const auto& row : csv::parse(text, "sm_frac,ft_frac,bs,seqlen,latency_ms", source)) {
    if (row.fields.size() != 5) {
      throw Error(ErrorKind::Parse,
                  fmt::format("{}:{}: expected 5 fields, got {}", source, row.line,
                              row.fields.size()));
    }
    ProfilePoint p;
    p.sm_frac = csv::to_double(row.fields[0], source, row.line);
    p.ft_frac = csv::to_double(row.fields[1], source, row.line);
    p.bs = static_cast<int>(csv::to_int(row.fields[2], source, row.line));
    p.seqlen = static_cast<int>(csv::to_int(row.fields[3], source, row.line));
    p.latency_ms = csv::to_double(row.fields[4], source, row.line);
    if (p.bs < 1 || p.seqlen < 0 || !(p.latency_ms > 0.0) || p.sm_frac <= 0.0 ||
        p.ft_frac < 0.0 || p.sm_frac + p.ft_frac > 1.0 + 1e-9) {
      throw Error(ErrorKind::Parse, fmt::format("{}:{}: profile row out of range", source,
                                                row.line));
    }
    out.push_back(p);
  }
  return out;
}

std::vector<ProfilePoint> load_profiles(const std::string& path) {
  return parse_profiles(csv::read_file(path), path);
}

std::string format_profiles(std::span<const ProfilePoint> points) {
  std::string out = "sm_frac,ft_frac,bs,seqlen,latency_ms\n";
  for (const auto& p : points) {
    out += fmt::format("{},{},{},{},{}\n", p.sm_frac, p.ft_frac, p.bs, p.seqlen, p.latency_ms);
  }
  return out;
}

std::string models_to_json(const ModelBundle& models, const FitSummary* summary) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["grid_steps"] = models.solo.grid_steps();
  j["pad_bs"] = models.solo.pad_bs();
  ordered_json solo = ordered_json::array();
  for (const auto& [u, c] : models.solo.coeffs()) {
    solo.push_back({{"sm_units", u}, {"b0", c.b0}, {"c0", c.c0}, {"k0", c.k0}});
  }
  j["solo"] = solo;
  if (models.colo) {
    j["colo"] = {{"b1", models.colo->b1}, {"k1", models.colo->k1}};
  } else {
    j["colo"] = nullptr;
  }
  if (summary != nullptr) {
    ordered_json fit;
    fit["solo_rows"] = summary->solo_rows;
    fit["solo_mape"] = summary->solo_mape_overall;
    fit["solo_max_error"] = summary->solo_max_error;
    ordered_json per = ordered_json::object();
    for (const auto& [u, m] : summary->solo_mape) per[std::to_string(u)] = m;
    fit["solo_mape_by_sm_units"] = per;
    fit["colo_rows"] = summary->colo_rows;
    if (summary->colo_mape) {
      fit["colo_mape"] = *summary->colo_mape;
    } else {
      fit["colo_mape"] = nullptr;
    }
    j["fit"] = fit;
  }
  return j.dump(2) + "\n";
}

ModelBundle models_from_json(const std::string& text, const std::string& source) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelBundle b{SoloModel(j.at("grid_steps").get<int>(), j.at("pad_bs").get<int>()),
                  std::nullopt};
    for (const auto& e : j.at("solo")) {
      b.solo.set(e.at("sm_units").get<int>(),
                 {e.at("b0").get<double>(), e.at("c0").get<double>(), e.at("k0").get<double>()});
    }
    if (j.contains("colo") && !j.at("colo").is_null()) {
      b.colo = ColoModel{j["colo"].at("b1").get<double>(), j["colo"].at("k1").get<double>()};
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, fmt::format("{}: bad model file: {}", source, e.what()));
  }
}

ModelBundle load_models(const std::string& path) {
  return models_from_json(csv::read_file(path), path);
}

}  // namespace coloc

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "coloc/oracle.hpp"
#include "coloc/predictor.hpp"
#include "support/contention_oracle.hpp"

using namespace coloc;

namespace {

std::vector<ProfilePoint> synth_solo(double b0, double c0, double k0) {
  std::vector<ProfilePoint> pts;
  for (int u = 1; u <= 10; ++u) {
    for (int bs : {4, 16, 64}) {
      for (int sl = 0; sl <= 512; sl += 32) {
        pts.push_back({u / 10.0, 0.0, bs, sl, bs * b0 + c0 + bs * k0 * sl});
      }
    }
  }
  return pts;
}

OracleParams contended_oracle() {
  OracleParams p;
  p.ft_bytes_per_unit = default_ft_bytes_per_unit(ModelSpec{}, 2);
  return p;
}

}  // namespace

TEST_CASE("fit_solo recovers generating coefficients") {
  auto pts = synth_solo(0.05, 5.0, 0.0001);
  auto m = fit_solo(pts);
  for (const auto& [u, c] : m.coeffs()) {
    CHECK(std::abs(c.b0 - 0.05) < 1e-9);
    CHECK(std::abs(c.c0 - 5.0) < 1e-9);
    CHECK(std::abs(c.k0 - 0.0001) < 1e-9);
  }
  CHECK(predict_solo(m, 0.5, 16, 1024) == doctest::Approx(7.4384).epsilon(1e-12));
  CHECK(predict_solo(m, 0.5, 2, 300) == predict_solo(m, 0.5, 4, 300));
  CHECK(predict_solo(m, 0.5, 4, 0) == doctest::Approx(4 * 0.05 + 5.0));
  CHECK(predict_solo(m, 0.5, 0, 0) == doctest::Approx(4 * 0.05 + 5.0));
}

TEST_CASE("fit_solo agrees with a QR solve of the raw design") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.02);
  std::vector<ProfilePoint> pts;
  for (int bs : {4, 16, 64}) {
    for (int sl = 0; sl <= 512; sl += 16) {
      pts.push_back({0.3, 0.0, bs, sl, (2.0 + 0.07 * bs + 4e-5 * bs * sl) * std::exp(n(rng))});
    }
  }
  auto m = fit_solo(pts);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(pts.size()), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    x(r, 0) = pts[i].bs;
    x(r, 1) = 1.0;
    x(r, 2) = static_cast<double>(pts[i].bs) * pts[i].seqlen;
    y(r) = pts[i].latency_ms;
  }
  Eigen::VectorXd ref = x.colPivHouseholderQr().solve(y);
  const auto& c = m.at(3);
  CHECK(c.b0 == doctest::Approx(ref(0)).epsilon(1e-9));
  CHECK(c.c0 == doctest::Approx(ref(1)).epsilon(1e-9));
  CHECK(c.k0 == doctest::Approx(ref(2)).epsilon(1e-9));
}

TEST_CASE("fit_solo reports rank deficiency with the grid point") {
  std::vector<ProfilePoint> pts;
  for (int bs : {1, 2, 4}) {
    for (int sl : {0, 128, 256}) pts.push_back({0.7, 0.0, bs, sl, 12.0});
  }
  try {
    fit_solo(pts);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Fit);
    CHECK(std::string(e.what()).find("0.7") != std::string::npos);
  }
}

TEST_CASE("predict_solo rejects off-grid shares") {
  auto m = fit_solo(synth_solo(0.05, 5.0, 0.0001));
  CHECK_THROWS_AS(predict_solo(m, 0.55, 8, 10), Error);
  CHECK_THROWS_AS(predict_solo(m, 0.0, 8, 10), Error);
  CHECK(predict_solo(m, 0.3, 8, 100) < predict_solo(m, 0.3, 8, 101));
}

TEST_CASE("fit_colo recovers generating coefficients") {
  auto solo = fit_solo(synth_solo(0.05, 5.0, 0.0001));
  std::vector<ProfilePoint> pts;
  for (int i = 1; i < 10; ++i) {
    for (int f = 1; i + f <= 10; ++f) {
      const SmPartition part(i, f);
      for (int bs : {4, 16, 64}) {
        const double ratio = part.infer_frac() * 1.1 + part.ft_frac() * 0.6;
        pts.push_back({part.infer_frac(), part.ft_frac(), bs, 256,
                       ratio * predict_solo(solo, part.infer_frac(), bs, 256)});
      }
    }
  }
  ColoFitOptions keep_all;
  keep_all.clamp_margin = -1.0;
  for (const auto& opts : {ColoFitOptions{}, keep_all}) {
    auto colo = fit_colo(pts, solo, opts);
    CHECK(std::abs(colo.b1 - 1.1) < 1e-9);
    CHECK(std::abs(colo.k1 - 0.6) < 1e-9);
  }
}

TEST_CASE("fit_colo needs co-run rows") {
  auto pts = synth_solo(0.05, 5.0, 0.0001);
  auto solo = fit_solo(pts);
  CHECK_THROWS_AS(fit_colo(pts, solo), Error);
  std::vector<ProfilePoint> one{{0.5, 0.5, 16, 100, 30.0}, {0.5, 0.5, 4, 100, 30.0}};
  CHECK_THROWS_AS(fit_colo(one, solo), Error);
}

TEST_CASE("predict_colo factor and clamp") {
  SoloModel solo;
  solo.set(9, {0.0, 30.0, 0.0});
  solo.set(5, {0.0, 30.0, 0.0});
  ColoModel colo{1.1, 0.6};
  CHECK(predict_colo(colo, solo, SmPartition(9, 1), 8, 0) == doctest::Approx(31.5));
  CHECK(predict_colo(colo, solo, SmPartition(5, 0), 8, 0) == doctest::Approx(30.0));
  double prev = 0.0;
  for (int f = 0; f <= 5; ++f) {
    const double v = predict_colo(colo, solo, SmPartition(5, f), 8, 0);
    CHECK(v >= prev);
    CHECK(v >= predict_solo(solo, 0.5, 8, 0));
    prev = v;
  }
}

TEST_CASE("contention slowdown closed form") {
  CHECK(contention_slowdown({0.6, 0.6, 1.0}) == doctest::Approx(1.2));
  auto [ri, rf] = proportional_shares({0.6, 0.6, 1.0});
  CHECK(ri == doctest::Approx(0.5));
  CHECK(ri + rf == doctest::Approx(1.0));
  CHECK(contention_slowdown({0.6, 0.0, 1.0}) == 1.0);
  CHECK(contention_slowdown({0.3, 0.4, 1.0}) == 1.0);
  CHECK_THROWS_AS(contention_slowdown({0.3, 0.4, 0.0}), Error);
  CHECK_THROWS_AS(contention_slowdown({1.3, 0.4, 1.0}), Error);
}

TEST_CASE("contention slowdown matches a time-sliced sharing simulation") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double b = 1.0 + 99.0 * u(rng);
    const double fi = b * (0.05 + 0.95 * u(rng));
    const double ff = b * u(rng);
    const double closed = contention_slowdown({fi, ff, b});
    const double sliced = testing::sliced_slowdown(fi, ff, b);
    CHECK(std::abs(closed - sliced) / sliced <= 0.01);
    const auto [ri, rf] = proportional_shares({fi, ff, b});
    if (fi + ff >= b) CHECK(ri + rf == doctest::Approx(b));
  }
}

TEST_CASE("oracle behaviour") {
  OracleParams p = contended_oracle();
  GpuSpec g;
  ModelSpec m;
  Noise quiet(0.0, 1);
  const double solo = oracle_solo_ms(p, g, m, 16, 300, 1.0);
  CHECK(oracle_decode_ms(p, g, m, 16, 300, SmPartition(10, 0), false, quiet) == solo);
  // Memory bound: a faster compute path changes nothing.
  OracleParams fast = p;
  fast.compute_fixed_ms /= 2;
  fast.compute_per_request_ms /= 2;
  fast.compute_per_token_ms /= 2;
  CHECK(oracle_solo_ms(fast, g, m, 16, 300, 0.5) == oracle_solo_ms(p, g, m, 16, 300, 0.5));
  // Slowdown equals the proportional-sharing factor.
  const SmPartition part(5, 5);
  auto c = oracle_contention(p, g, m, 16, 300, part);
  const double co = oracle_decode_ms(p, g, m, 16, 300, part, true, quiet);
  CHECK(co / oracle_solo_ms(p, g, m, 16, 300, 0.5) ==
        doctest::Approx(std::max(1.0, c.f_infer + c.f_ft)));
  CHECK(compute_speedup(p, 1.0) == 1.0);
  for (int i = 1; i < 10; ++i) {
    CHECK(compute_speedup(p, i / 10.0) < compute_speedup(p, (i + 1) / 10.0));
    CHECK(bandwidth_speedup(p, i / 10.0) < bandwidth_speedup(p, (i + 1) / 10.0));
  }
}

TEST_CASE("noise-free profiles fit back to the oracle") {
  OracleParams p = contended_oracle();
  GpuSpec g;
  ModelSpec m;
  Noise quiet(0.0, 1);
  auto pts = generate_profiles(p, g, m, ProfileGrid{}, quiet);
  auto solo = fit_solo(pts);
  auto colo = fit_colo(pts, solo);
  auto s = summarize_fit(pts, solo, colo);
  CHECK(s.solo_mape_overall < 0.01);
  CHECK(*s.colo_mape < 0.02);
  std::size_t corun = 0;
  for (const auto& pt : pts) corun += pt.ft_frac > 0 ? 1 : 0;
  CHECK(corun == 45u * 3u * 9u);
}

TEST_CASE("profile and model serialization round trip") {
  OracleParams p = contended_oracle();
  Noise n(0.01, 9);
  auto pts = generate_profiles(p, GpuSpec{}, ModelSpec{}, ProfileGrid{}, n);
  auto text = format_profiles(pts);
  auto back = parse_profiles(text, "mem");
  REQUIRE(back.size() == pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(back[i].latency_ms == pts[i].latency_ms);
    CHECK(back[i].sm_frac == pts[i].sm_frac);
  }
  ModelBundle b{fit_solo(pts), std::nullopt};
  b.colo = fit_colo(pts, b.solo);
  auto again = models_from_json(models_to_json(b), "mem");
  CHECK(again.colo->b1 == b.colo->b1);
  CHECK(again.solo.at(4).k0 == b.solo.at(4).k0);
  CHECK(models_to_json(again) == models_to_json(b));

  CHECK_THROWS_AS(parse_profiles("sm_frac,ft_frac,bs,seqlen,latency_ms\n0.5,0,4,10\n", "x"),
                  Error);
  try {
    parse_profiles("sm_frac,ft_frac,bs,seqlen,latency_ms\n0.5,0,4,10,3\n0.5,0,4,1o,3\n", "f.csv");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("f.csv:3") != std::string::npos);
  }
}

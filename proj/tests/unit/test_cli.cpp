// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <string>

#include "coloc/cli.hpp"
#include "coloc/core.hpp"
#include "coloc/csv.hpp"

using namespace coloc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("coloc_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

cli::Config small_config() {
  cli::Config c;
  c.trace.kind = TraceSpec::Kind::Synthetic;
  c.trace.rate_rps = 4.0;
  c.trace.duration_s = 20.0;
  c.trace.output = {{32, 64}, {1, 1}};
  c.sim.log_steps = true;
  return c;
}

}  // namespace

TEST_CASE("config JSON round trip") {
  auto c = small_config();
  c.sim.mode = SimMode::Static;
  c.sim.headroom = 0.07;
  c.trace.phases = {{10, 1.0}, {5, 2.0}};
  const auto text = cli::config_to_json(c);
  const auto back = cli::config_from_json(text, "mem");
  CHECK(cli::config_to_json(back) == text);
  CHECK(back.sim.mode == SimMode::Static);
  CHECK(back.trace.phases.size() == 2);
}

TEST_CASE("config errors name the offending key") {
  try {
    cli::config_from_json(R"({"gpu": {"sm_cout": 10}})", "cfg.json");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
    CHECK(std::string(e.what()).find("sm_cout") != std::string::npos);
    CHECK(std::string(e.what()).find("cfg.json") != std::string::npos);
  }
  CHECK_THROWS_AS(cli::config_from_json(R"({"gpus": "two"})", "x"), Error);
  CHECK_THROWS_AS(cli::config_from_json("{", "x"), Error);
  CHECK_THROWS_AS(cli::config_from_json(R"({"headroom": 1.5})", "x"), Error);
  CHECK_THROWS_AS(cli::config_from_json(R"({"trace": {"kind": "file"}})", "x"), Error);
}

TEST_CASE("relative trace paths resolve against the config directory") {
  const auto c = cli::config_from_json(R"({"trace": {"kind": "file", "path": "../data/t.csv"}})",
                                       "x", "/a/configs");
  CHECK(c.trace.path == "/a/data/t.csv");
}

TEST_CASE("flags override the file") {
  auto c = small_config();
  cli::Overrides o;
  o.mode = "separate";
  o.seed = 9;
  o.noise_sigma = 0.02;
  o.gpus = 4;
  o.trace_path = "t.csv";
  cli::apply(c, o);
  CHECK(c.sim.mode == SimMode::Separate);
  CHECK(c.sim.seed == 9);
  CHECK(c.sim.noise_sigma == 0.02);
  CHECK(c.sim.gpus == 4);
  CHECK(c.trace.kind == TraceSpec::Kind::File);
  o = {};
  o.headroom = -0.1;
  CHECK_THROWS_AS(cli::apply(c, o), Error);
}

TEST_CASE("report fields come from the full sample") {
  Metrics m;
  for (int i = 1; i <= 100; ++i) m.tpot_samples.push_back(i);
  m.qos_violations = 3;
  const auto r = cli::make_report(SimMode::Adaptive, m);
  CHECK(r.tpot_p50_ms == 50);
  CHECK(r.tpot_p99_ms == 99);
  CHECK(r.tpot_mean_ms == doctest::Approx(50.5));
  CHECK(r.qos_violation_rate == doctest::Approx(0.03));
  const auto cdf = cli::tpot_cdf_csv(m.tpot_samples);
  CHECK(cdf.rfind("tpot_ms,cdf\n", 0) == 0);
  CHECK(cdf.find("100.0000,1.000") != std::string::npos);
}

TEST_CASE("fit without co-run rows omits the co-run model") {
  const auto dir = scratch("fit");
  auto c = small_config();
  cli::cmd_gen_profiles(c, (dir / "p.csv").string());
  auto pts = load_profiles((dir / "p.csv").string());
  std::erase_if(pts, [](const ProfilePoint& p) { return p.ft_frac > 0.0; });
  csv::write_file((dir / "solo.csv").string(), format_profiles(pts));
  const auto o = cli::cmd_fit(c, (dir / "solo.csv").string(), (dir / "m.json").string());
  CHECK(o.colo_missing);
  CHECK_FALSE(load_models((dir / "m.json").string()).colo.has_value());

  const auto full = cli::cmd_fit(c, (dir / "p.csv").string(), (dir / "m2.json").string());
  CHECK_FALSE(full.colo_missing);
  CHECK(full.summary.solo_mape_overall <= 0.03);
}

TEST_CASE("simulate writes every artifact and repeats byte for byte") {
  const auto a = scratch("sim_a");
  const auto b = scratch("sim_b");
  auto c = small_config();
  cli::cmd_simulate(c, std::nullopt, a.string());
  cli::cmd_simulate(c, std::nullopt, b.string());
  for (const char* f : {"report.json", "tpot_cdf.csv", "sm_timeline.csv", "mem_timeline.csv",
                        "events.csv", "decisions_dev0.csv", "decisions_dev1.csv"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(a / f));
    CHECK(csv::read_file((a / f).string()) == csv::read_file((b / f).string()));
  }
  CHECK_THROWS_AS(cli::cmd_simulate(c, std::string("/nonexistent/models.json"), a.string()),
                  Error);
}

TEST_CASE("static simulate keeps a constant split in the SM timeline") {
  const auto dir = scratch("static");
  auto c = small_config();
  c.sim.mode = SimMode::Static;
  cli::cmd_simulate(c, std::nullopt, dir.string());
  const auto tl = csv::read_file((dir / "sm_timeline.csv").string());
  for (const auto& row : csv::parse(tl, "t_ms,device,infer_frac,ft_frac", "tl")) {
    CHECK(row.fields[2] == "0.60");
    CHECK(row.fields[3] == "0.40");
  }
}

TEST_CASE("compare is deterministic and ranks adaptive first on a co-location friendly trace") {
  auto c = small_config();
  c.trace.duration_s = 60.0;
  const auto models = cli::obtain_models(c, std::nullopt);
  const auto x = cli::compare_modes(c, models);
  const auto y = cli::compare_modes(c, models);
  CHECK(cli::comparison_table(x) == cli::comparison_table(y));
  CHECK(cli::comparison_json(c, x) == cli::comparison_json(c, y));
  CHECK(x.gain_vs_static > 0.0);
  CHECK(x.gain_vs_separate > 0.0);
  CHECK(x.reports[0].qos_violation_rate == 0.0);
}

TEST_CASE("error line is one parsable line") {
  CHECK(cli::error_line("parse", "bad \"x\"\nline") ==
        "error kind=parse message=\"bad \\\"x\\\" line\"");
}

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <string>

#include "coloc/core.hpp"
#include "coloc/workload.hpp"

using namespace coloc;

TEST_CASE("parse_trace sorts and validates") {
  auto r = parse_trace(
      "arrival_ms,prompt_tokens,output_tokens\n30,10,5\n10,20,6\n20,30,7\n", "t.csv");
  REQUIRE(r.size() == 3);
  CHECK(r[0].arrival_ms == 10);
  CHECK(r[1].arrival_ms == 20);
  CHECK(r[2].prompt_tokens == 10);
  try {
    parse_trace("arrival_ms,prompt_tokens,output_tokens\n1,2,3\n5,10,0\n", "t.csv");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
    CHECK(std::string(e.what()).find("t.csv:3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_trace("a,b,c\n1,2,3\n", "t.csv"), Error);
  CHECK_THROWS_AS(load_trace("/nonexistent/trace.csv"), Error);
}

TEST_CASE("synth_trace is deterministic and Poisson") {
  TraceSpec s;
  s.rate_rps = 5.0;
  s.duration_s = 60.0;
  s.seed = 7;
  auto a = synth_trace(s);
  auto b = synth_trace(s);
  CHECK(a == b);
  const double mean = 300.0;
  CHECK(std::abs(static_cast<double>(a.size()) - mean) <= 3.0 * std::sqrt(mean));
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1].arrival_ms <= a[i].arrival_ms);
  s.seed = 8;
  CHECK_FALSE(synth_trace(s) == a);

  int within = 0;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    s.seed = seed;
    const auto n = static_cast<double>(synth_trace(s).size());
    within += std::abs(n - mean) <= 3.0 * std::sqrt(mean) ? 1 : 0;
  }
  CHECK(within >= 197);
}

TEST_CASE("phased trace follows each phase's rate") {
  TraceSpec s;
  s.phases = {{60, 2.0}, {60, 10.0}, {60, 5.0}};
  s.seed = 3;
  auto t = synth_trace(s);
  int counts[3] = {0, 0, 0};
  for (const auto& r : t) counts[std::min(2, static_cast<int>(r.arrival_ms / 60000.0))]++;
  CHECK(std::abs(counts[0] - 120) <= 3 * std::sqrt(120.0));
  CHECK(std::abs(counts[1] - 600) <= 3 * std::sqrt(600.0));
  CHECK(std::abs(counts[2] - 300) <= 3 * std::sqrt(300.0));
}

TEST_CASE("trace CSV round trip") {
  TraceSpec s;
  s.seed = 11;
  auto t = synth_trace(s);
  CHECK(parse_trace(format_trace(t), "mem") == t);
}

TEST_CASE("convert_trace maps foreign columns") {
  auto r = convert_trace("ts,ContextTokens,GeneratedTokens,extra\n2.5,100,0,x\n1.0,50,20,y\n",
                         "az.csv", "ts", "ContextTokens", "GeneratedTokens", 1000.0);
  REQUIRE(r.size() == 2);
  CHECK(r[0].arrival_ms == 0.0);
  CHECK(r[1].arrival_ms == doctest::Approx(1500.0));
  CHECK(r[1].output_tokens == 1);
  CHECK_THROWS_AS(convert_trace("a,b\n1,2\n", "x", "a", "b", "c", 1.0), Error);
}

TEST_CASE("trace stats") {
  std::vector<Request> r{{0, 100, 10}, {1000, 300, 30}};
  auto s = summarize_trace(r);
  CHECK(s.count == 2);
  CHECK(s.mean_prompt == 200);
  CHECK(s.mean_output == 20);
  CHECK(s.rate_rps == doctest::Approx(2.0));
}

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>
#include <set>
#include <vector>

#include "coloc/oracle.hpp"
#include "coloc/scheduler.hpp"
#include "support/plan_oracle.hpp"

using namespace coloc;

namespace {

SoloModel flat_solo(const std::vector<double>& c0_by_units) {
  SoloModel m;
  for (int u = 1; u <= 10; ++u) m.set(u, {0.0, c0_by_units[static_cast<std::size_t>(u - 1)], 0.0});
  return m;
}

ModelBundle oracle_models() {
  OracleParams p;
  p.ft_bytes_per_unit = default_ft_bytes_per_unit(ModelSpec{}, 2);
  Noise quiet(0.0, 1);
  auto pts = generate_profiles(p, GpuSpec{}, ModelSpec{}, ProfileGrid{}, quiet);
  ModelBundle b{fit_solo(pts), std::nullopt};
  b.colo = fit_colo(pts, b.solo);
  return b;
}

}  // namespace

TEST_CASE("split_minibatch") {
  FinetuneSpec s;
  CHECK(split_minibatch(16, s) == 2);
  s.per_sample_layer_ms = 12.0;
  CHECK(split_minibatch(16, s) == 1);
  s.per_sample_layer_ms = 0.5;
  CHECK(split_minibatch(16, s) == 16);
  s.per_sample_layer_ms = 3.0;
  CHECK(split_minibatch(12, s) == 3);
  CHECK_THROWS_AS(split_minibatch(0, s), Error);
}

TEST_CASE("finetune queue walks forward then backward") {
  FinetuneQueue q(4, FinetuneSpec{});
  CHECK(q.micro_bs() == 2);
  CHECK(q.units_per_iteration() == 2 * 4 * 8);
  auto all = [](int) { return true; };
  std::vector<std::pair<int, Direction>> seen;
  for (int i = 0; i < 8; ++i) {
    auto u = q.next_finetune_unit(all);
    REQUIRE(u);
    seen.emplace_back(u->layer, u->direction);
    CHECK(u->est_ms_full_sm == doctest::Approx(10.0));
  }
  std::vector<std::pair<int, Direction>> want{
      {0, Direction::Forward},  {1, Direction::Forward},  {2, Direction::Forward},
      {3, Direction::Forward},  {3, Direction::Backward}, {2, Direction::Backward},
      {1, Direction::Backward}, {0, Direction::Backward}};
  CHECK(seen == want);
  CHECK(q.peek().micro_index == 1);
  auto no_layer_0 = [](int l) { return l != 0; };
  CHECK_FALSE(q.next_finetune_unit(no_layer_0).has_value());
  CHECK(q.position() == 8);
  CHECK(q.upcoming_layers(6) == std::vector<int>{0, 1, 2, 3, 3, 2});
}

TEST_CASE("finetune queue stalls on a layer still in flight") {
  FinetuneQueue q(8, FinetuneSpec{});
  std::set<int> resident{0, 1};
  auto is_res = [&](int l) { return resident.count(l) != 0; };
  CHECK(q.next_finetune_unit(is_res));
  CHECK(q.next_finetune_unit(is_res));
  CHECK_FALSE(q.next_finetune_unit(is_res).has_value());
  resident.insert(2);
  auto u = q.next_finetune_unit(is_res);
  REQUIRE(u);
  CHECK(u->layer == 2);
}

TEST_CASE("plan_partition picks the largest feasible finetune share") {
  std::vector<double> c0;
  for (int u = 1; u <= 10; ++u) c0.push_back(63.0 - 50.0 * u / 10.0);
  auto solo = flat_solo(c0);
  ColoModel colo{1.0, 0.0};
  auto d = plan_partition(solo, colo, 8, 100, QosTarget{40.0});
  CHECK(d.partition == SmPartition(5, 5));
  CHECK(d.predicted_decode_ms == doctest::Approx(38.0));
  CHECK(d.finetune_runnable);
}

TEST_CASE("plan_partition prefers the prediction nearest QoS at equal share") {
  auto solo = flat_solo({100, 100, 100, 39, 35, 30, 30, 30, 30, 30});
  ColoModel colo{0.0, 2.0};
  auto d = plan_partition(solo, colo, 8, 100, QosTarget{40.0});
  CHECK(d.partition == SmPartition(4, 5));
  CHECK(d.predicted_decode_ms == doctest::Approx(39.0));
}

TEST_CASE("plan_partition pauses finetuning when nothing fits") {
  auto solo = flat_solo({90, 80, 70, 65, 60, 55, 52, 50, 47, 45});
  auto d = plan_partition(solo, ColoModel{1.0, 0.5}, 64, 4000, QosTarget{40.0});
  CHECK(d.partition == SmPartition::full_inference());
  CHECK_FALSE(d.finetune_runnable);
  CHECK(d.reason == DecisionReason::QosRisk);
  CHECK(d.predicted_decode_ms == doctest::Approx(45.0));
}

TEST_CASE("plan_partition equals exhaustive search") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    SoloModel solo;
    for (int i = 1; i <= 10; ++i) {
      const double speed = i / (i + 1.5 * (10 - i) * u(rng) + 0.01);
      solo.set(i, {0.2 * u(rng) / speed, (5 + 20 * u(rng)) / speed, 1e-4 * u(rng) / speed});
    }
    ColoModel colo{0.5 + u(rng), 0.2 + 1.2 * u(rng)};
    const int bs = 1 + static_cast<int>(rng() % 64);
    const double sl = static_cast<double>(rng() % 4096);
    PlanOptions opts;
    opts.headroom = trial % 2 == 0 ? 0.0 : 0.05;
    auto d = plan_partition(solo, colo, bs, sl, QosTarget{40.0}, opts);
    auto want = testing::brute_force_plan(solo, colo, bs, sl, 40.0 * (1 - opts.headroom), 10);
    REQUIRE(d.partition.infer_units() == want.infer);
    REQUIRE(d.partition.ft_units() == want.ft);
    CHECK(d.finetune_runnable == (want.ft > 0));
  }
}

TEST_CASE("scheduler events") {
  auto models = oracle_models();
  Scheduler s(models.solo, *models.colo, QosTarget{40.0});
  auto d0 = s.on_event(SchedEvent::DecodeStepStart, 8, 500);
  REQUIRE(d0.finetune_runnable);
  // Idempotent while the state is unchanged.
  auto d1 = s.on_event(SchedEvent::DecodeStepStart, 8, 500);
  CHECK(d1.partition == d0.partition);
  CHECK(d1.reason == DecisionReason::Steady);

  auto stall = s.on_event(SchedEvent::FinetuneStallStart, 8, 500);
  CHECK(stall.partition == SmPartition::full_inference());
  CHECK_FALSE(stall.finetune_runnable);
  CHECK(stall.reason == DecisionReason::FinetuneStall);
  CHECK(s.on_event(SchedEvent::DecodeStepStart, 8, 500).partition ==
        SmPartition::full_inference());
  auto resume = s.on_event(SchedEvent::FinetuneStallEnd, 8, 500);
  CHECK(resume.reason == DecisionReason::FinetuneResume);
  CHECK(resume.partition == d0.partition);

  // A surge that breaks the current plan moves SMs back to inference.
  auto surge = s.on_event(SchedEvent::NewArrival, 48, 3000);
  CHECK(surge.predicted_decode_ms <= 40.0);
  CHECK(surge.partition.infer_units() > d0.partition.infer_units());
  CHECK(surge.reason == DecisionReason::NewArrival);
}

TEST_CASE("scheduler safety and unit length under the oracle") {
  auto models = oracle_models();
  OracleParams p;
  p.ft_bytes_per_unit = default_ft_bytes_per_unit(ModelSpec{}, 2);
  GpuSpec g;
  ModelSpec m;
  Noise quiet(0.0, 1);
  for (int bs = 1; bs <= 64; bs += 3) {
    for (double sl : {0.0, 256.0, 1024.0, 3000.0}) {
      PlanOptions opts;
      opts.headroom = 0.05;
      auto d = plan_partition(models.solo, *models.colo, bs, sl, QosTarget{40.0}, opts);
      if (!d.finetune_runnable) continue;
      const double real = oracle_decode_ms(p, g, m, bs, sl, d.partition, true, quiet);
      CHECK(real <= 40.0);
      const double unit =
          10.0 / compute_speedup(p, d.partition.ft_frac()) *
          contention_slowdown(oracle_contention(p, g, m, bs, sl, d.partition));
      CHECK(unit < 40.0);
    }
  }
}

TEST_CASE("chosen inference share is nondecreasing in batch size") {
  auto models = oracle_models();
  for (double sl : {128.0, 512.0, 1500.0, 3500.0}) {
    int prev = 0;
    for (int bs = 1; bs <= 64; ++bs) {
      auto d = plan_partition(models.solo, *models.colo, bs, sl, QosTarget{40.0});
      CHECK(d.partition.infer_units() >= prev);
      prev = d.partition.infer_units();
    }
  }
}

TEST_CASE("decision log line") {
  ScheduleDecision d{SmPartition(6, 4), 37.25, true, DecisionReason::Steady};
  CHECK(format_decision(12.5, d) == "12.500,steady,0.60,0.40,37.2500");
}

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "coloc/core.hpp"
#include "coloc/predictor.hpp"

namespace coloc {

enum class Direction { Forward, Backward };

const char* to_string(Direction d);

struct FinetuneSpec {
  int mini_bs = 16;
  /// One sample through one layer, forward, on the whole GPU.
  double per_sample_layer_ms = 5.0;
  /// Backward time relative to forward. PEFT skips weight gradients for the
  /// frozen matrices, so backward costs about as much as forward.
  double backward_factor = 1.0;
  double unit_target_ms = 10.0;

  void validate() const;
};

struct FinetuneUnit {
  int layer = 0;
  Direction direction = Direction::Forward;
  int micro_batch = 1;
  double est_ms_full_sm = 0.0;
  /// Index of the micro-batch within its mini-batch iteration.
  int micro_index = 0;
};

/// Largest divisor of mini_bs whose per-layer unit time at full SM stays
/// within the target; never below 1.
int split_minibatch(int mini_bs, const FinetuneSpec& spec);

/// Layer-granular walk over finetuning iterations: per micro-batch, forward
/// through layers 0..L-1 then backward L-1..0, repeating forever.
class FinetuneQueue {
 public:
  FinetuneQueue(int layer_count, const FinetuneSpec& spec);

  int micro_bs() const { return micro_bs_; }
  int units_per_iteration() const { return units_per_iteration_; }
  std::int64_t position() const { return pos_; }

  FinetuneUnit unit_at(std::int64_t pos) const;
  FinetuneUnit peek() const { return unit_at(pos_); }

  /// The next unit when its layer is resident, consuming it; nullopt when
  /// its weights are not on the device yet (the caller records a stall).
  std::optional<FinetuneUnit> next_finetune_unit(const std::function<bool(int)>& resident);

  /// Layers of the next `count` units, starting from the current position.
  std::vector<int> upcoming_layers(int count) const;

 private:
  int layers_;
  FinetuneSpec spec_;
  int micro_bs_;
  int micro_batches_;
  int units_per_iteration_;
  std::int64_t pos_ = 0;
};

enum class DecisionReason { Steady, NewArrival, QosRisk, FinetuneStall, FinetuneResume };

const char* to_string(DecisionReason r);

struct ScheduleDecision {
  SmPartition partition;
  double predicted_decode_ms = 0.0;
  bool finetune_runnable = false;
  DecisionReason reason = DecisionReason::Steady;
};

struct PlanOptions {
  int grid_steps = 10;
  /// Fraction of the QoS target held back for prediction error.
  double headroom = 0.0;
};

/// Picks the partition with the largest finetune share whose predicted
/// decode latency fits the budget qos * (1 - headroom); ties go to the
/// prediction closest to the budget, then to fewer inference SMs. When no
/// partition with a finetune share fits, returns full inference and marks
/// finetuning not runnable.
ScheduleDecision plan_partition(const SoloModel& solo, const ColoModel& colo, int bs,
                                double seqlen, const QosTarget& qos,
                                const PlanOptions& options = {});

enum class SchedEvent { DecodeStepStart, NewArrival, FinetuneStallStart, FinetuneStallEnd };

const char* to_string(SchedEvent e);

struct SchedulerOptions {
  PlanOptions plan;
  /// Keep the current partition while it is feasible and no other partition
  /// offers a larger finetune share.
  bool hysteresis = true;
};

/// Event-driven wrapper around plan_partition that tracks the active
/// partition and finetune stalls.
class Scheduler {
 public:
  Scheduler(SoloModel solo, ColoModel colo, QosTarget qos, SchedulerOptions options = {});

  ScheduleDecision on_event(SchedEvent event, int bs, double seqlen);

  const SmPartition& current() const { return current_; }
  bool stalled() const { return stalled_; }
  double budget_ms() const { return qos_.tpot_ms * (1.0 - options_.plan.headroom); }
  const SoloModel& solo() const { return solo_; }
  const ColoModel& colo() const { return colo_; }

 private:
  SoloModel solo_;
  ColoModel colo_;
  QosTarget qos_;
  SchedulerOptions options_;
  SmPartition current_;
  bool stalled_ = false;
};

/// One decision-log line: `t_ms,reason,infer_frac,ft_frac,predicted_ms`.
std::string format_decision(double t_ms, const ScheduleDecision& d);

}  // namespace coloc

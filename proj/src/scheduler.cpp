// SPDX-License-Identifier: Apache-2.0
#include "coloc/scheduler.hpp"

#include <algorithm>
#include <utility>

#include <fmt/format.h>

namespace coloc {

const char* to_string(Direction d) { return d == Direction::Forward ? "fwd" : "bwd"; }

const char* to_string(DecisionReason r) {
  switch (r) {
    case DecisionReason::Steady: return "steady";
    case DecisionReason::NewArrival: return "new_arrival";
    case DecisionReason::QosRisk: return "qos_risk";
    case DecisionReason::FinetuneStall: return "finetune_stall";
    case DecisionReason::FinetuneResume: return "finetune_resume";
  }
  return "unknown";
}

const char* to_string(SchedEvent e) {
  switch (e) {
    case SchedEvent::DecodeStepStart: return "decode_step_start";
    case SchedEvent::NewArrival: return "new_arrival";
    case SchedEvent::FinetuneStallStart: return "finetune_stall_start";
    case SchedEvent::FinetuneStallEnd: return "finetune_stall_end";
  }
  return "unknown";
}

void FinetuneSpec::validate() const {
  if (mini_bs < 1 || !(per_sample_layer_ms > 0.0) || !(backward_factor > 0.0) ||
      !(unit_target_ms > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "finetune spec fields must be positive");
  }
}

int split_minibatch(int mini_bs, const FinetuneSpec& spec) {
  if (mini_bs < 1) {
    throw Error(ErrorKind::InvalidArgument, "mini_bs must be >= 1");
  }
  const double per_sample = spec.per_sample_layer_ms * std::max(1.0, spec.backward_factor);
  for (int d = mini_bs; d > 1; --d) {
    if (mini_bs % d == 0 && d * per_sample <= spec.unit_target_ms + 1e-12) return d;
  }
  return 1;
}

FinetuneQueue::FinetuneQueue(int layer_count, const FinetuneSpec& spec)
    : layers_(layer_count), spec_(spec) {
  if (layers_ < 1) throw Error(ErrorKind::InvalidArgument, "layer_count must be >= 1");
  spec_.validate();
  micro_bs_ = split_minibatch(spec_.mini_bs, spec_);
  micro_batches_ = spec_.mini_bs / micro_bs_;
  units_per_iteration_ = 2 * layers_ * micro_batches_;
}

FinetuneUnit FinetuneQueue::unit_at(std::int64_t pos) const {
  const std::int64_t per_micro = 2 * static_cast<std::int64_t>(layers_);
  const auto r = static_cast<int>(pos % per_micro);
  FinetuneUnit u;
  u.micro_batch = micro_bs_;
  u.micro_index = static_cast<int>((pos / per_micro) % micro_batches_);
  if (r < layers_) {
    u.layer = r;
    u.direction = Direction::Forward;
    u.est_ms_full_sm = micro_bs_ * spec_.per_sample_layer_ms;
  } else {
    u.layer = 2 * layers_ - 1 - r;
    u.direction = Direction::Backward;
    u.est_ms_full_sm = micro_bs_ * spec_.per_sample_layer_ms * spec_.backward_factor;
  }
  return u;
}

std::optional<FinetuneUnit> FinetuneQueue::next_finetune_unit(
    const std::function<bool(int)>& resident) {
  const FinetuneUnit u = peek();
  if (!resident(u.layer)) return std::nullopt;
  ++pos_;
  return u;
}

std::vector<int> FinetuneQueue::upcoming_layers(int count) const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(std::max(0, count)));
  for (int i = 0; i < count; ++i) out.push_back(unit_at(pos_ + i).layer);
  return out;
}

ScheduleDecision plan_partition(const SoloModel& solo, const ColoModel& colo, int bs,
                                double seqlen, const QosTarget& qos, const PlanOptions& options) {
  const int steps = options.grid_steps;
  const double budget = qos.tpot_ms * (1.0 - options.headroom);
  std::optional<ScheduleDecision> best;
  for (int f = steps - 1; f >= 1 && !best; --f) {
    for (int i = 1; i + f <= steps; ++i) {
      const SmPartition p(i, f, steps);
      const double pred = predict_colo(colo, solo, p, bs, seqlen);
      if (pred > budget) continue;
      // Within one finetune share, prefer the prediction nearest the budget;
      // on exact ties the smaller inference share (seen first) stays.
      if (!best || pred > best->predicted_decode_ms) {
        best = ScheduleDecision{p, pred, true, DecisionReason::Steady};
      }
    }
  }
  if (best) return *best;
  const SmPartition full = SmPartition::full_inference(steps);
  return {full, predict_solo(solo, 1.0, bs, seqlen), false, DecisionReason::QosRisk};
}

Scheduler::Scheduler(SoloModel solo, ColoModel colo, QosTarget qos, SchedulerOptions options)
    : solo_(std::move(solo)),
      colo_(colo),
      qos_(qos),
      options_(options),
      current_(SmPartition::full_inference(options.plan.grid_steps)) {
  qos_.validate();
  if (options_.plan.headroom < 0.0 || options_.plan.headroom >= 1.0) {
    throw Error(ErrorKind::InvalidArgument, "headroom must lie in [0, 1)");
  }
}

ScheduleDecision Scheduler::on_event(SchedEvent event, int bs, double seqlen) {
  const int steps = options_.plan.grid_steps;
  const SmPartition full = SmPartition::full_inference(steps);
  ScheduleDecision d;
  switch (event) {
    case SchedEvent::FinetuneStallStart:
      stalled_ = true;
      d = {full, predict_solo(solo_, 1.0, bs, seqlen), false, DecisionReason::FinetuneStall};
      break;
    case SchedEvent::FinetuneStallEnd:
      stalled_ = false;
      d = plan_partition(solo_, colo_, bs, seqlen, qos_, options_.plan);
      if (d.finetune_runnable) d.reason = DecisionReason::FinetuneResume;
      break;
    case SchedEvent::DecodeStepStart:
    case SchedEvent::NewArrival: {
      if (stalled_) {
        d = {full, predict_solo(solo_, 1.0, bs, seqlen), false, DecisionReason::FinetuneStall};
        break;
      }
      d = plan_partition(solo_, colo_, bs, seqlen, qos_, options_.plan);
      if (options_.hysteresis && d.finetune_runnable && current_.ft_units() > 0 &&
          current_.ft_units() >= d.partition.ft_units()) {
        const double pred = predict_colo(colo_, solo_, current_, bs, seqlen);
        if (pred <= budget_ms()) d = {current_, pred, true, DecisionReason::Steady};
      }
      if (d.finetune_runnable && d.partition != current_ && event == SchedEvent::NewArrival) {
        d.reason = DecisionReason::NewArrival;
      }
      break;
    }
  }
  current_ = d.partition;
  return d;
}

std::string format_decision(double t_ms, const ScheduleDecision& d) {
  return fmt::format("{:.3f},{},{:.2f},{:.2f},{:.4f}", t_ms, to_string(d.reason),
                     d.partition.infer_frac(), d.partition.ft_frac(), d.predicted_decode_ms);
}

}  // namespace coloc

// SPDX-License-Identifier: Apache-2.0
#include "coloc/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>
#include <optional>
#include <queue>

#include <fmt/format.h>

#include "coloc/mempool.hpp"
#include "coloc/swap.hpp"

namespace coloc {

const char* to_string(SimMode m) {
  switch (m) {
    case SimMode::Adaptive: return "adaptive";
    case SimMode::Separate: return "separate";
    case SimMode::Static: return "static";
  }
  return "unknown";
}

SimMode parse_mode(const std::string& s) {
  if (s == "adaptive") return SimMode::Adaptive;
  if (s == "separate") return SimMode::Separate;
  if (s == "static") return SimMode::Static;
  throw Error(ErrorKind::InvalidArgument,
              fmt::format("unknown mode '{}' (expected adaptive, separate or static)", s));
}

void SimConfig::validate() const {
  qos.validate();
  finetune.validate();
  if (gpus < 1) throw Error(ErrorKind::InvalidArgument, "gpus must be >= 1");
  if (mode == SimMode::Separate && gpus < 2) {
    throw Error(ErrorKind::InvalidArgument, "separate mode needs at least 2 gpus");
  }
  if (noise_sigma < 0.0) throw Error(ErrorKind::InvalidArgument, "noise_sigma must be >= 0");
  if (grid_steps < 2) throw Error(ErrorKind::InvalidArgument, "grid_steps must be >= 2");
  if (headroom < 0.0 || headroom >= 1.0) {
    throw Error(ErrorKind::InvalidArgument, "headroom must lie in [0, 1)");
  }
  if (max_bs < 0) throw Error(ErrorKind::InvalidArgument, "max_bs must be >= 0");
  const auto& s = static_split;
  if (s.infer_sm_units < 1 || s.ft_sm_units < 0 || s.infer_sm_units + s.ft_sm_units > grid_steps ||
      !(s.infer_mem_frac > 0.0) || s.infer_mem_frac > 1.0) {
    throw Error(ErrorKind::InvalidArgument, "static split out of range");
  }
  if (model_infer.layer_count < 1 || model_ft.layer_count < 1 ||
      model_ft.frozen_bytes_per_layer == 0) {
    throw Error(ErrorKind::InvalidArgument, "model specs must have layers and weights");
  }
  resolved_oracle().validate();
}

OracleParams SimConfig::resolved_oracle() const {
  OracleParams p = oracle;
  const int micro = split_minibatch(finetune.mini_bs, finetune);
  p.ft_unit_ms_full_sm = micro * finetune.per_sample_layer_ms;
  if (p.ft_bytes_per_unit == 0.0) p.ft_bytes_per_unit = default_ft_bytes_per_unit(model_ft, micro);
  return p;
}

std::uint64_t SimConfig::resolved_pinned_bytes() const {
  if (ft_pinned_bytes >= 0) return static_cast<std::uint64_t>(ft_pinned_bytes);
  const auto micro = static_cast<std::uint64_t>(split_minibatch(finetune.mini_bs, finetune));
  return static_cast<std::uint64_t>(model_ft.layer_count) *
         (model_ft.trainable_bytes_per_layer + micro * model_ft.activation_bytes_per_sample_layer);
}

int layers_fitting(int chunks, std::uint64_t frozen_bytes, std::uint64_t chunk_bytes) {
  if (chunks <= 0) return 0;
  const std::uint64_t full = frozen_bytes / chunk_bytes;
  const std::uint64_t tail = frozen_bytes % chunk_bytes;
  std::uint64_t tails_per_chunk = 0;
  if (tail > 0) {
    const std::uint64_t tail_blocks = (tail + kBlockBytes - 1) / kBlockBytes;
    tails_per_chunk = (chunk_bytes / kBlockBytes) / tail_blocks;
  }
  auto need = [&](std::uint64_t w) {
    return w * full + (tail > 0 ? (w + tails_per_chunk - 1) / tails_per_chunk : 0);
  };
  std::uint64_t w = 0;
  while (need(w + 1) <= static_cast<std::uint64_t>(chunks)) ++w;
  return static_cast<int>(w);
}

double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) return 0.0;
  q = std::clamp(q, 0.0, 1.0);
  const auto n = samples.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   samples.end());
  return samples[rank - 1];
}

ModelBundle fit_models(const SimConfig& cfg, const ProfileGrid& grid, double profile_noise_sigma,
                       std::uint64_t seed, std::vector<ProfilePoint>* profiles_out) {
  const OracleParams p = cfg.resolved_oracle();
  ProfileGrid g = grid;
  g.grid_steps = cfg.grid_steps;
  Noise noise(profile_noise_sigma, seed);
  auto points = generate_profiles(p, cfg.gpu, cfg.model_infer, g, noise);
  ModelBundle b;
  b.solo = fit_solo(points, cfg.grid_steps, p.pad_bs);
  b.colo = fit_colo(points, b.solo);
  if (profiles_out) *profiles_out = std::move(points);
  return b;
}

namespace {

enum class EvKind { Arrival, StepEnd, UnitEnd, TransferEnd };

struct Event {
  double t = 0.0;
  std::uint64_t seq = 0;
  EvKind kind = EvKind::Arrival;
  int device = 0;
  std::uint64_t tag = 0;
};

struct EventLater {
  bool operator()(const Event& a, const Event& b) const {
    if (a.t != b.t) return a.t > b.t;
    return a.seq > b.seq;
  }
};

struct Live {
  std::size_t id = 0;
  int remaining = 0;
  int context = 0;
  int generated = 0;
  std::uint64_t committed = 0;
  std::vector<KvSlot> slots;
};

struct Device {
  int id = 0;
  bool serves = false;
  bool trains = false;
  std::unique_ptr<MemoryPool> pool;
  std::unique_ptr<SwapManager> swap;
  std::unique_ptr<FinetuneQueue> queue;
  std::unique_ptr<Scheduler> sched;
  std::vector<TensorHandle> pinned;

  std::vector<Live> batch;
  std::deque<std::size_t> pending;
  std::uint64_t committed = 0;
  std::uint64_t pending_slots = 0;

  bool stepping = false;
  double step_ms = 0.0;
  int infer_units = 0;
  int ft_units = 0;
  bool runnable = false;
  double contention = 1.0;

  std::optional<FinetuneUnit> unit;
  double work_left = 0.0;
  double rate = 0.0;
  double rate_since = 0.0;
  std::uint64_t version = 0;
  bool stalled = false;
  double stall_since = 0.0;

  int window_target = -1;
  int kv_demand = -1;
  bool trimmed = false;
  std::size_t reclaim_for = static_cast<std::size_t>(-1);
};

class Sim {
 public:
  Sim(const SimConfig& cfg, std::span<const Request> trace, const ModelBundle* models)
      : cfg_(cfg), oracle_(cfg.resolved_oracle()), trace_(trace), noise_(cfg.noise_sigma, cfg.seed) {
    cfg_.validate();
    if (trace_.empty()) throw Error(ErrorKind::InvalidInput, "trace is empty");
    for (std::size_t i = 1; i < trace_.size(); ++i) {
      if (trace_[i].arrival_ms < trace_[i - 1].arrival_ms) {
        throw Error(ErrorKind::InvalidInput, "trace arrivals are not sorted");
      }
    }
    if (cfg_.mode == SimMode::Adaptive && cfg_.finetune_enabled) {
      if (!models || !models->colo) {
        throw Error(ErrorKind::InvalidInput, "adaptive mode needs fitted solo and co-run models");
      }
      if (models->solo.grid_steps() != cfg_.grid_steps) {
        throw Error(ErrorKind::InvalidInput, "model grid does not match the configured grid");
      }
      models_ = models;
    }
    build_devices();
  }

  SimResult run() {
    for (std::size_t i = 0; i < trace_.size(); ++i) {
      push(trace_[i].arrival_ms, EvKind::Arrival, 0, i);
    }
    while (!events_.empty()) {
      const Event e = events_.top();
      events_.pop();
      if (e.t < now_) throw Error(ErrorKind::InvalidInput, "event time went backwards");
      now_ = e.t;
      switch (e.kind) {
        case EvKind::Arrival: on_arrival(e.tag); break;
        case EvKind::StepEnd: on_step_end(dev(e.device)); break;
        case EvKind::UnitEnd: on_unit_end(dev(e.device), e.tag); break;
        case EvKind::TransferEnd: on_transfer_end(dev(e.device)); break;
      }
      if (cfg_.check_invariants) check(e);
      if (arrivals_seen_ == trace_.size() && (serving_idle() || serving_stuck())) break;
    }
    finish();
    return std::move(result_);
  }

 private:
  Device& dev(int id) { return devices_[static_cast<std::size_t>(id)]; }

  void push(double t, EvKind kind, int device, std::uint64_t tag) {
    if (t < now_) throw Error(ErrorKind::InvalidInput, "event scheduled in the past");
    events_.push({t, seq_++, kind, device, tag});
  }

  void log(const char* kind, const std::string& detail) {
    result_.event_log += fmt::format("{:.3f},{},{}\n", now_, kind, detail);
  }

  // Setup -----------------------------------------------------------------

  void build_devices() {
    const int g = cfg_.gpus;
    const int serving = cfg_.mode == SimMode::Separate ? (g + 1) / 2 : g;
    for (int i = 0; i < g; ++i) {
      Device d;
      d.id = i;
      d.serves = i < serving;
      d.trains = cfg_.finetune_enabled && (cfg_.mode != SimMode::Separate || !d.serves);
      PoolOptions po;
      po.small_pool_bytes = cfg_.small_pool_bytes;
      po.static_reserved_bytes = d.serves ? cfg_.infer_static_bytes : 0;
      d.pool = std::make_unique<MemoryPool>(cfg_.gpu, cfg_.model_infer, po);
      d.infer_units = cfg_.grid_steps;
      devices_.push_back(std::move(d));
      if (devices_.back().serves) serving_ids_.push_back(i);
    }
    result_.decision_logs.resize(devices_.size());
    booting_ = true;
    for (auto& d : devices_) setup_device(d);
    booting_ = false;
    for (auto& d : devices_) refresh_rate(d);
  }

  void setup_device(Device& d) {
    auto& pool = *d.pool;
    if (d.serves && cfg_.mode == SimMode::Adaptive) {
      const double swap_ms = static_cast<double>(cfg_.model_ft.frozen_bytes_per_layer) /
                             cfg_.gpu.h2d_bandwidth * 1000.0;
      const double rb = reserved_bytes(swap_ms, cfg_.qos, cfg_.max_bs, cfg_.model_infer);
      pool.set_reserve_chunks(
          static_cast<int>(std::ceil(rb / static_cast<double>(pool.chunk_bytes()))));
    }
    if (cfg_.mode == SimMode::Static && d.serves) {
      const int kv = static_cast<int>(std::lround(cfg_.static_split.infer_mem_frac *
                                                  pool.chunk_count()));
      pool.set_kv_chunk_limit(kv);
      pool.set_tensor_chunk_limit(pool.chunk_count() - kv);
    }
    if (cfg_.mode == SimMode::Adaptive && d.serves && cfg_.finetune_enabled) {
      SchedulerOptions so;
      so.plan.grid_steps = cfg_.grid_steps;
      so.plan.headroom = cfg_.headroom;
      so.hysteresis = cfg_.hysteresis;
      d.sched = std::make_unique<Scheduler>(models_->solo, *models_->colo, cfg_.qos, so);
    }
    if (!d.trains) {
      record_sm(d);
      record_mem(d);
      return;
    }
    d.queue = std::make_unique<FinetuneQueue>(cfg_.model_ft.layer_count, cfg_.finetune);
    result_.metrics.micro_bs = d.queue->micro_bs();
    d.swap = std::make_unique<SwapManager>(pool, cfg_.model_ft, cfg_.gpu.h2d_bandwidth);
    // Adapters, optimizer state and activations stay on the device for the whole run.
    std::uint64_t left = cfg_.resolved_pinned_bytes();
    while (left > 0) {
      const auto piece = std::min(left, pool.chunk_bytes());
      auto a = pool.tensor_alloc(piece);
      if (!a) {
        throw Error(ErrorKind::Construction, "device memory cannot hold the finetune state");
      }
      d.pinned.push_back(a->handle);
      left -= piece;
    }
    if (cfg_.mode == SimMode::Adaptive && d.serves) {
      d.ft_units = cfg_.grid_steps - 1;
      d.infer_units = 1;
      adjust_memory(d);
    } else {
      if (cfg_.mode == SimMode::Static) {
        d.infer_units = cfg_.static_split.infer_sm_units;
        d.ft_units = cfg_.static_split.ft_sm_units;
      } else {
        d.infer_units = 0;
        d.ft_units = cfg_.grid_steps;
      }
      const int budget = arena_limit(d) - static_cast<int>(pinned_chunks(d));
      set_window(d, layers_fitting(budget, cfg_.model_ft.frozen_bytes_per_layer,
                                   pool.chunk_bytes()),
                 0);
    }
    const auto upcoming = d.queue->upcoming_layers(2 * cfg_.model_ft.layer_count);
    d.swap->preload(upcoming);
    d.runnable = true;
    record_sm(d);
    record_mem(d);
  }

  int arena_limit(const Device& d) const {
    return d.pool->tensor_chunk_limit().value_or(d.pool->chunk_count());
  }

  std::size_t pinned_chunks(const Device& d) const {
    std::vector<ChunkId> ids;
    for (auto h : d.pinned) ids.push_back(d.pool->live_tensors().at(h).chunk_id);
    std::sort(ids.begin(), ids.end());
    return static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
  }

  // Memory coordination ---------------------------------------------------

  std::uint64_t spc(const Device& d) const { return d.pool->slots_per_chunk(); }

  int chunks_for(const Device& d, std::uint64_t slots) const {
    return static_cast<int>((slots + spc(d) - 1) / spc(d));
  }

  /// Sets the residency window; 0 suspends finetuning.
  void set_window(Device& d, int w, int kv_demand) {
    const int layers = cfg_.model_ft.layer_count;
    w = std::min(w, layers);
    if (w == d.window_target) return;
    d.window_target = w;
    if (w == 0) {
      d.swap->window_resize(0);
    } else {
      d.swap->set_window(w);
    }
    result_.window_events.push_back({now_, d.id, kv_demand, w});
    log("window", fmt::format("dev={} kv_chunks={} window={}", d.id, kv_demand, w));
    record_mem(d);
  }

  /// Adaptive only: sizes the finetune window from what the KV cache needs,
  /// keeping the reserve free.
  void adjust_memory(Device& d) {
    if (!(cfg_.mode == SimMode::Adaptive && d.serves && d.trains)) return;
    auto& pool = *d.pool;
    const int total = pool.chunk_count();
    const int demand = std::min(total, chunks_for(d, d.committed + d.pending_slots));
    const int budget = std::max(0, total - demand - pool.reserve_chunks());
    pool.set_tensor_chunk_limit(budget);
    const int pinned = static_cast<int>(pinned_chunks(d));
    int w = layers_fitting(budget - pinned, cfg_.model_ft.frozen_bytes_per_layer,
                           pool.chunk_bytes());
    if (demand != d.kv_demand) {
      d.kv_demand = demand;
      d.trimmed = false;
    }
    if (d.trimmed) w = std::min(w, d.window_target);
    const bool changed = w != d.window_target;
    set_window(d, w, demand);
    if (changed) replan_swaps(d);
    // Layers that share a chunk can keep the arena over budget after the
    // window shrinks; drop one more layer once the link drains.
    if (pool.tensor_chunk_count() > budget && !d.swap->link_busy() && d.swap->queued().empty() &&
        d.window_target > 0) {
      d.trimmed = true;
      set_window(d, d.window_target - 1, demand);
      replan_swaps(d);
    }
    if (d.swap->suspended() && !d.stalled) begin_stall(d);
    if (!d.swap->suspended() && d.stalled) maybe_end_stall(d);
    refresh_rate(d);
  }

  void try_admit(Device& d) {
    auto& pool = *d.pool;
    bool any = false;
    while (!d.pending.empty()) {
      const Request& r = trace_[d.pending.front()];
      const auto need = static_cast<std::uint64_t>(r.prompt_tokens + r.output_tokens);
      const int extra = std::max(0, chunks_for(d, d.committed + need) - pool.kv_chunk_count());
      int room = pool.unassigned_chunk_count();
      if (auto lim = pool.kv_chunk_limit()) {
        room = std::min(room, *lim - pool.kv_chunk_count());
      }
      if (extra > room) {
        if (cfg_.mode == SimMode::Adaptive && d.trains && d.reclaim_for != d.pending.front()) {
          d.reclaim_for = d.pending.front();
          try {
            const auto plan = coordinate_reclaim(pool, extra, now_, d.swap->transfer_ms());
            log("reclaim", fmt::format("dev={} req={} immediate={} delayed={}", d.id,
                                       d.reclaim_for, plan.immediate_chunks, plan.delayed.size()));
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::CapacityExhausted) throw;
            log("reclaim", fmt::format("dev={} req={} wait_for_kv=1", d.id, d.reclaim_for));
          }
        }
        break;
      }
      for (int i = 0; i < extra; ++i) pool.kv_acquire_chunk();
      Live l;
      l.id = d.pending.front();
      l.remaining = r.output_tokens;
      l.context = r.prompt_tokens;
      l.committed = need;
      l.slots.reserve(need);
      for (int i = 0; i < r.prompt_tokens; ++i) l.slots.push_back(alloc_slot(d));
      d.committed += need;
      d.pending_slots -= need;
      d.pending.pop_front();
      d.batch.push_back(std::move(l));
      ++result_.metrics.admitted;
      log("admit", fmt::format("dev={} req={} bs={}", d.id, d.batch.back().id, d.batch.size()));
      any = true;
    }
    if (any) {
      record_mem(d);
      if (!d.stepping) start_step(d, SchedEvent::NewArrival);
    }
  }

  KvSlot alloc_slot(Device& d) {
    auto s = d.pool->kv_alloc_slot();
    if (!s) throw Error(ErrorKind::CapacityExhausted, "KV slot allocation failed");
    return *s;
  }

  void release_kv(Device& d) {
    auto& pool = *d.pool;
    const int keep = chunks_for(d, d.committed);
    for (ChunkId c : pool.kv_empty_chunks()) {
      if (pool.kv_chunk_count() <= keep) break;
      pool.kv_release_chunk(c);
    }
  }

  // Inference ---------------------------------------------------------------

  void on_arrival(std::uint64_t idx) {
    ++arrivals_seen_;
    const Request& r = trace_[idx];
    Device& d = dev(serving_ids_[rr_++ % serving_ids_.size()]);
    log("arrive", fmt::format("dev={} req={} prompt={} output={}", d.id, idx, r.prompt_tokens,
                              r.output_tokens));
    const auto need = static_cast<std::uint64_t>(r.prompt_tokens + r.output_tokens);
    const int max_chunks = d.pool->kv_chunk_limit().value_or(d.pool->chunk_count());
    if (chunks_for(d, need) > max_chunks) {
      ++result_.metrics.dropped;
      log("drop", fmt::format("dev={} req={} reason=kv_capacity", d.id, idx));
      return;
    }
    d.pending.push_back(idx);
    d.pending_slots += need;
    adjust_memory(d);
    try_admit(d);
    if (d.sched && d.stepping && !d.stalled) {
      // Planned now for the log; the partition itself changes at the next step.
      const auto dec = d.sched->on_event(SchedEvent::NewArrival, static_cast<int>(d.batch.size()),
                                         mean_context(d));
      log_decision(d, dec);
    }
  }

  double mean_context(const Device& d) const {
    if (d.batch.empty()) return 0.0;
    double s = 0.0;
    for (const auto& l : d.batch) s += l.context;
    return s / static_cast<double>(d.batch.size());
  }

  void log_decision(Device& d, const ScheduleDecision& dec) {
    result_.decision_logs[static_cast<std::size_t>(d.id)] += format_decision(now_, dec) + "\n";
  }

  void start_step(Device& d, SchedEvent ev) {
    const int bs = static_cast<int>(d.batch.size());
    const double seqlen = mean_context(d);
    const int steps = cfg_.grid_steps;
    int iu = steps;
    int fu = 0;
    bool runnable = false;
    if (d.trains) {
      if (d.sched) {
        const auto dec = d.sched->on_event(d.stalled ? SchedEvent::DecodeStepStart : ev, bs, seqlen);
        log_decision(d, dec);
        iu = dec.partition.infer_units();
        fu = dec.partition.ft_units();
        runnable = dec.finetune_runnable;
      } else {
        iu = cfg_.static_split.infer_sm_units;
        fu = cfg_.static_split.ft_sm_units;
        runnable = true;
      }
    }
    const SmPartition part(iu, fu, steps);
    const bool ft_active = runnable && fu > 0;
    d.step_ms = oracle_decode_ms(oracle_, cfg_.gpu, cfg_.model_infer, bs, seqlen, part, ft_active,
                                 noise_);
    d.contention = ft_active ? contention_slowdown(oracle_contention(
                                   oracle_, cfg_.gpu, cfg_.model_infer, bs, seqlen, part))
                             : 1.0;
    d.stepping = true;
    apply_partition(d, iu, fu, runnable);
    ++result_.metrics.decode_steps;
    if (cfg_.log_steps) {
      log("step", fmt::format("dev={} bs={} seqlen={:.1f} infer={:.2f} ft={:.2f} ms={:.4f}", d.id,
                              bs, seqlen, part.infer_frac(), part.ft_frac(), d.step_ms));
    }
    push(now_ + d.step_ms, EvKind::StepEnd, d.id, 0);
  }

  void apply_partition(Device& d, int iu, int fu, bool runnable) {
    const bool changed = iu != d.infer_units || fu != d.ft_units;
    d.infer_units = iu;
    d.ft_units = fu;
    d.runnable = runnable;
    if (changed) {
      log("partition", fmt::format("dev={} infer={:.2f} ft={:.2f}", d.id,
                                   static_cast<double>(iu) / cfg_.grid_steps,
                                   static_cast<double>(fu) / cfg_.grid_steps));
      record_sm(d);
    }
    refresh_rate(d);
  }

  void on_step_end(Device& d) {
    auto& m = result_.metrics;
    const bool violated = d.step_ms > cfg_.qos.tpot_ms;
    std::vector<Live> keep;
    keep.reserve(d.batch.size());
    for (auto& l : d.batch) {
      m.tpot_samples.push_back(d.step_ms);
      if (violated) ++m.qos_violations;
      --l.remaining;
      ++l.generated;
      if (l.remaining > 0) {
        l.slots.push_back(alloc_slot(d));
        ++l.context;
        keep.push_back(std::move(l));
        continue;
      }
      if (l.generated != trace_[l.id].output_tokens) {
        throw Error(ErrorKind::InvalidInput, "request finished with a wrong token count");
      }
      for (auto s : l.slots) d.pool->kv_free_slot(s);
      d.committed -= l.committed;
      ++m.completed;
      log("finish", fmt::format("dev={} req={}", d.id, l.id));
    }
    const bool shrank = keep.size() != d.batch.size();
    d.batch = std::move(keep);
    d.stepping = false;
    if (shrank) {
      release_kv(d);
      adjust_memory(d);
      record_mem(d);
    }
    try_admit(d);
    if (d.stepping) return;
    if (!d.batch.empty()) {
      start_step(d, SchedEvent::DecodeStepStart);
      return;
    }
    d.contention = 1.0;
    if (d.sched) {
      // Nothing to decode: finetuning may take all but the smallest share.
      apply_partition(d, 1, cfg_.grid_steps - 1, !d.stalled);
    } else {
      refresh_rate(d);
    }
  }

  bool serving_idle() const {
    for (const auto& d : devices_) {
      if (d.serves && (d.stepping || !d.batch.empty() || !d.pending.empty())) return false;
    }
    return true;
  }

  /// Requests wait for memory that nothing in flight will free.
  bool serving_stuck() const {
    for (const auto& d : devices_) {
      if (!d.serves) continue;
      if (d.stepping || !d.batch.empty()) return false;
      if (d.swap && (d.swap->link_busy() || !d.swap->queued().empty())) return false;
    }
    return true;
  }

  // Finetuning --------------------------------------------------------------

  bool ft_allowed(const Device& d) const {
    return d.trains && d.runnable && d.ft_units > 0 && !d.swap->suspended();
  }

  double target_rate(const Device& d) const {
    if (!ft_allowed(d)) return 0.0;
    const double share = static_cast<double>(d.ft_units) / cfg_.grid_steps;
    return compute_speedup(oracle_, share) / d.contention;
  }

  void refresh_rate(Device& d) {
    if (!d.trains) return;
    const double r = target_rate(d);
    if (d.unit) {
      d.work_left = std::max(0.0, d.work_left - d.rate * (now_ - d.rate_since));
      d.rate_since = now_;
      if (r == d.rate) return;
      d.rate = r;
      ++d.version;
      if (r > 0.0) push(now_ + d.work_left / r, EvKind::UnitEnd, d.id, d.version);
      return;
    }
    d.rate = r;
    d.rate_since = now_;
    if (r > 0.0) try_start_unit(d);
  }

  std::vector<int> upcoming(const Device& d) const {
    return d.queue->upcoming_layers(2 * cfg_.model_ft.layer_count);
  }

  void replan_swaps(Device& d) {
    if (!d.trains || booting_) return;
    const auto up = upcoming(d);
    std::optional<int> computing;
    if (d.unit) computing = d.unit->layer;
    d.swap->plan(up, computing);
    kick_link(d);
  }

  void kick_link(Device& d) {
    if (auto cmd = d.swap->start_next()) {
      log("xfer_start", fmt::format("dev={} layer={} dir={} ms={:.3f}", d.id, cmd->layer,
                                    to_string(cmd->direction), cmd->duration_ms));
      push(now_ + cmd->duration_ms, EvKind::TransferEnd, d.id, 0);
    }
  }

  void try_start_unit(Device& d) {
    if (d.unit || !ft_allowed(d) || d.stalled) return;
    auto* swap = d.swap.get();
    auto u = d.queue->next_finetune_unit([swap](int l) { return swap->resident(l); });
    if (!u) {
      begin_stall(d);
      replan_swaps(d);
      return;
    }
    d.unit = u;
    d.work_left = u->est_ms_full_sm;
    d.rate = target_rate(d);
    d.rate_since = now_;
    ++d.version;
    push(now_ + d.work_left / d.rate, EvKind::UnitEnd, d.id, d.version);
    replan_swaps(d);
  }

  void on_unit_end(Device& d, std::uint64_t version) {
    if (version != d.version || !d.unit) return;
    ++result_.metrics.finetune_units_done;
    d.unit.reset();
    d.work_left = 0.0;
    replan_swaps(d);
    try_start_unit(d);
  }

  void begin_stall(Device& d) {
    if (d.stalled) return;
    d.stalled = true;
    d.stall_since = now_;
    log("stall_start", fmt::format("dev={} layer={}", d.id, d.queue->peek().layer));
    if (d.sched) {
      const auto dec = d.sched->on_event(SchedEvent::FinetuneStallStart,
                                         static_cast<int>(d.batch.size()), mean_context(d));
      log_decision(d, dec);
    }
  }

  void maybe_end_stall(Device& d) {
    if (!d.stalled || d.swap->suspended() || !d.swap->resident(d.queue->peek().layer)) return;
    d.stalled = false;
    result_.metrics.stall_ms += now_ - d.stall_since;
    log("stall_end", fmt::format("dev={} layer={}", d.id, d.queue->peek().layer));
    if (d.sched) {
      const auto dec = d.sched->on_event(SchedEvent::FinetuneStallEnd,
                                         static_cast<int>(d.batch.size()), mean_context(d));
      log_decision(d, dec);
      if (!d.stepping) {
        // Idle device: the new plan applies immediately.
        apply_partition(d, 1, cfg_.grid_steps - 1, true);
        return;
      }
      // A running step keeps its partition; the replan takes effect at the next step.
      if (d.ft_units == 0) return;
      d.runnable = true;
    }
    refresh_rate(d);
    try_start_unit(d);
  }

  void on_transfer_end(Device& d) {
    const auto cmd = d.swap->finish_in_flight();
    log("xfer_end", fmt::format("dev={} layer={} dir={}", d.id, cmd.layer,
                                to_string(cmd.direction)));
    replan_swaps(d);
    kick_link(d);
    if (cmd.direction == TransferDirection::Evict) {
      adjust_memory(d);
      try_admit(d);
    }
    record_mem(d);
    maybe_end_stall(d);
  }

  // Records -----------------------------------------------------------------

  void record_sm(const Device& d) {
    result_.metrics.sm_timeline.push_back(
        {now_, d.id, static_cast<double>(d.infer_units) / cfg_.grid_steps,
         static_cast<double>(d.ft_units) / cfg_.grid_steps});
  }

  void record_mem(const Device& d) {
    MemSample s{now_, d.id, d.pool->kv_chunk_count(), d.pool->tensor_chunk_count(),
                d.trains ? d.window_target : 0};
    auto& tl = result_.metrics.mem_timeline;
    for (auto it = tl.rbegin(); it != tl.rend(); ++it) {
      if (it->device != d.id) continue;
      if (it->kv_chunks == s.kv_chunks && it->tensor_chunks == s.tensor_chunks &&
          it->window == s.window) {
        return;
      }
      break;
    }
    tl.push_back(s);
  }

  void check(const Event& e) {
    for (auto& d : devices_) {
      d.pool->check_invariants();
      if (d.swap) d.swap->check_invariants();
      std::uint64_t live = 0;
      for (const auto& l : d.batch) live += l.slots.size();
      if (live != d.pool->kv_live_slots()) {
        throw Error(ErrorKind::InvalidInput,
                    fmt::format("KV slot accounting broken after event at {}", e.t));
      }
      if (d.pool->kv_capacity_slots() < d.committed) {
        throw Error(ErrorKind::InvalidInput, "KV chunks do not cover committed slots");
      }
    }
  }

  void finish() {
    auto& m = result_.metrics;
    m.elapsed_ms = now_;
    for (auto& d : devices_) {
      for (auto idx : d.pending) {
        ++m.dropped;
        log("drop", fmt::format("dev={} req={} reason=kv_wait", d.id, idx));
      }
      if (d.stalled) m.stall_ms += now_ - d.stall_since;
      if (d.swap) {
        m.swap_count += d.swap->swap_count();
        m.bytes_moved += d.swap->bytes_moved();
      }
    }
    const double layers2 = 2.0 * cfg_.model_ft.layer_count;
    m.finetune_throughput =
        m.elapsed_ms > 0.0 ? static_cast<double>(m.micro_bs) *
                                 static_cast<double>(m.finetune_units_done) /
                                 (layers2 * m.elapsed_ms / 1000.0)
                           : 0.0;
    log("end", fmt::format("units={} tokens={} violations={}", m.finetune_units_done,
                           m.tpot_samples.size(), m.qos_violations));
  }

  SimConfig cfg_;
  OracleParams oracle_;
  std::span<const Request> trace_;
  const ModelBundle* models_ = nullptr;
  Noise noise_;
  std::vector<Device> devices_;
  std::vector<int> serving_ids_;
  std::priority_queue<Event, std::vector<Event>, EventLater> events_;
  std::uint64_t seq_ = 0;
  double now_ = 0.0;
  bool booting_ = false;
  std::size_t rr_ = 0;
  std::size_t arrivals_seen_ = 0;
  SimResult result_;
};

}  // namespace

SimResult run(const SimConfig& cfg, std::span<const Request> trace, const ModelBundle* models) {
  Sim sim(cfg, trace, models);
  return sim.run();
}

}  // namespace coloc

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "coloc/core.hpp"
#include "coloc/mempool.hpp"

namespace coloc {

enum class TransferDirection { Evict, Prefetch };

const char* to_string(TransferDirection d);

struct TransferCommand {
  int layer = 0;
  TransferDirection direction = TransferDirection::Prefetch;
  std::uint64_t bytes = 0;
  double duration_ms = 0.0;

  friend bool operator==(const TransferCommand&, const TransferCommand&) = default;
};

enum class LayerState { Absent, Prefetching, Resident, Evicting };

/// Window-based residency manager for the finetune model's frozen weights.
///
/// Keeps the next `window_layers` layers of the finetune execution order on
/// the device. Frozen weights live in the pool's tensor arena; a prefetch
/// allocates its tensors when it is issued and an eviction frees them when
/// the copy finishes. All transfers share one serialized host link, and
/// queued evictions run ahead of queued prefetches so memory comes back
/// before more is requested.
///
/// The manager never advances time itself. The caller pops commands with
/// start_next(), schedules their completion, and reports it through
/// finish_in_flight().
class SwapManager {
 public:
  SwapManager(MemoryPool& pool, const ModelSpec& model, double h2d_bandwidth,
              std::uint64_t pinned_bytes = 0);

  int window_layers() const { return window_; }
  /// True when the arena cannot hold even one layer; finetuning must pause.
  bool suspended() const { return suspended_; }

  /// Recomputes the window from the chunks the arena may use:
  /// max(1, floor((chunks * chunk_bytes - pinned) / frozen_bytes)), capped at
  /// layer_count. Residency follows on the next plan() call.
  int window_resize(int available_chunks);
  void set_window(int layers);

  /// Makes the first window of `upcoming` resident without transfers. Used
  /// for the initial load before any request arrives.
  void preload(std::span<const int> upcoming);

  /// Aligns residency with the first `window_layers` distinct layers of the
  /// execution order: `computing` (if any) followed by `upcoming`. Returns the
  /// commands newly queued on the link.
  std::vector<TransferCommand> plan(std::span<const int> upcoming,
                                    std::optional<int> computing = std::nullopt);

  /// Ring-order walk: after `layer` finishes, the window slides to start at
  /// layer + 1. With window w this evicts `layer` and prefetches
  /// (layer + w) mod layer_count.
  std::vector<TransferCommand> on_layer_complete(int layer);

  bool link_busy() const { return in_flight_.has_value(); }
  std::optional<TransferCommand> in_flight() const { return in_flight_; }
  const std::deque<TransferCommand>& queued() const { return queue_; }
  /// Moves the head of the queue onto the link; nullopt when busy or idle.
  std::optional<TransferCommand> start_next();
  /// Applies the effect of the in-flight transfer and frees the link.
  TransferCommand finish_in_flight();

  LayerState state(int layer) const;
  /// Weights usable by compute right now.
  bool resident(int layer) const { return state(layer) == LayerState::Resident; }
  std::vector<int> resident_layers() const;
  int layer_count() const { return static_cast<int>(states_.size()); }

  double transfer_ms() const;
  std::uint64_t swap_count() const { return swap_count_; }
  std::uint64_t bytes_moved() const { return bytes_moved_; }

  /// Releases every layer's tensors and drops queued work. The in-flight
  /// transfer, if any, is abandoned.
  void clear();

  void check_invariants() const;

 private:
  bool allocate_layer(int layer);
  void free_layer(int layer);
  TransferCommand make(int layer, TransferDirection d) const;

  MemoryPool* pool_;
  ModelSpec model_;
  double h2d_bandwidth_;
  std::uint64_t pinned_bytes_;
  int window_;
  bool suspended_ = false;
  std::vector<LayerState> states_;
  std::vector<std::vector<TensorHandle>> tensors_;
  std::deque<TransferCommand> queue_;
  std::optional<TransferCommand> in_flight_;
  std::uint64_t swap_count_ = 0;
  std::uint64_t bytes_moved_ = 0;
};

}  // namespace coloc

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "coloc/buddy.hpp"
#include "coloc/core.hpp"

namespace coloc {

constexpr std::uint64_t kBlockBytes = 2 * kMiB;

using ChunkId = int;
using TensorHandle = std::uint64_t;
using KvSlot = std::uint64_t;

enum class BlockState { Free, Kv, Tensor };
enum class ChunkOwner { Unassigned, KvCache, TensorArena };

const char* to_string(ChunkOwner owner);

struct Chunk {
  ChunkId id = 0;
  ChunkOwner owner = ChunkOwner::Unassigned;
  int blocks_in_use = 0;
  /// Tensor placement bitmap; only meaningful while owned by the tensor arena.
  std::vector<bool> used;
  /// Live KV token slots; only meaningful while owned by the KV cache.
  int live_slots = 0;
};

struct TensorAlloc {
  TensorHandle handle = 0;
  ChunkId chunk_id = 0;
  int first_block = 0;
  int block_span = 0;
  std::uint64_t requested_bytes = 0;
};

struct BlockCounts {
  std::int64_t free = 0;
  std::int64_t kv = 0;
  std::int64_t tensor = 0;
  std::int64_t reserved = 0;
  std::int64_t total() const { return free + kv + tensor + reserved; }
};

struct PoolOptions {
  std::uint64_t small_pool_bytes = 4 * kGiB;
  /// Memory held outside the pool (inference weights and activations).
  std::uint64_t static_reserved_bytes = 0;
};

/// Two-level device memory pool shared by the KV cache and a tensor arena.
///
/// Device memory (minus the small-tensor pool and static reservations) is cut
/// into 2 MiB blocks grouped into chunks of 2 x layer_count blocks. A chunk is
/// owned wholesale by either the KV cache, which packs token slots into it, or
/// the tensor arena, which places tensors on contiguous block runs. Chunks
/// return to the unassigned set as soon as their last user leaves.
///
/// The pool keeps `reserve_chunks` unassigned chunks out of the tensor arena's
/// reach so the KV cache can always grow by that much without waiting.
///
/// Not thread-safe; callers serialize all mutation.
class MemoryPool {
 public:
  MemoryPool(const GpuSpec& gpu, const ModelSpec& model, const PoolOptions& options = {});

  int chunk_count() const { return static_cast<int>(chunks_.size()); }
  int blocks_per_chunk() const { return blocks_per_chunk_; }
  std::uint64_t chunk_bytes() const { return blocks_per_chunk_ * kBlockBytes; }
  std::uint64_t slots_per_chunk() const { return slots_per_chunk_; }
  std::int64_t total_blocks() const {
    return static_cast<std::int64_t>(chunks_.size()) * blocks_per_chunk_;
  }
  const Chunk& chunk(ChunkId id) const;

  // KV cache client -------------------------------------------------------
  /// Claims the lowest-id unassigned chunk for the KV cache.
  ChunkId kv_acquire_chunk();
  void kv_release_chunk(ChunkId id);
  /// Slot from the lowest-id KV chunk that has room; nullopt when all KV
  /// chunks are full (the caller acquires another chunk).
  std::optional<KvSlot> kv_alloc_slot();
  void kv_free_slot(KvSlot slot);
  ChunkId kv_slot_chunk(KvSlot slot) const;
  int kv_chunk_count() const { return kv_chunks_; }
  std::uint64_t kv_live_slots() const { return kv_live_slots_; }
  std::uint64_t kv_capacity_slots() const {
    return static_cast<std::uint64_t>(kv_chunks_) * slots_per_chunk_;
  }
  /// KV chunks with no live slot, lowest id first.
  std::vector<ChunkId> kv_empty_chunks() const;

  // Tensor arena client ---------------------------------------------------
  std::optional<TensorAlloc> tensor_alloc(std::uint64_t bytes);
  void tensor_free(TensorHandle handle);
  const std::map<TensorHandle, TensorAlloc>& live_tensors() const { return tensors_; }
  int tensor_chunk_count() const { return tensor_chunks_; }

  // Small-tensor pool -----------------------------------------------------
  std::optional<BuddyPool::Grant> small_alloc(std::uint64_t bytes) {
    return small_.allocate(bytes);
  }
  void small_free(BuddyPool::Handle handle) { small_.free(handle); }
  const BuddyPool& small_pool() const { return small_; }

  // Reserve and static limits --------------------------------------------
  void set_reserve_chunks(int chunks);
  int reserve_chunks() const { return reserve_chunks_; }
  /// Caps used by static memory splits; nullopt means uncapped.
  void set_kv_chunk_limit(std::optional<int> limit) { kv_limit_ = limit; }
  void set_tensor_chunk_limit(std::optional<int> limit) { tensor_limit_ = limit; }
  std::optional<int> kv_chunk_limit() const { return kv_limit_; }
  std::optional<int> tensor_chunk_limit() const { return tensor_limit_; }

  int unassigned_chunk_count() const { return static_cast<int>(unassigned_.size()); }
  /// Chunks the tensor arena may hold right now without touching the reserve.
  int tensor_arena_budget_chunks() const;

  BlockCounts block_counts() const;
  BlockState block_state(std::int64_t block_id) const;

  /// Throws if any structural invariant is violated.
  void check_invariants() const;
  /// Line-oriented dump of chunk ownership and occupancy.
  std::string snapshot() const;

 private:
  ChunkId take_unassigned();
  void give_back(Chunk& c);

  int blocks_per_chunk_ = 0;
  std::uint64_t slots_per_chunk_ = 0;
  std::vector<Chunk> chunks_;
  std::set<ChunkId> unassigned_;
  std::set<ChunkId> kv_with_room_;
  std::vector<std::vector<std::uint32_t>> kv_free_slots_;
  std::vector<std::vector<bool>> kv_slot_live_;
  std::map<TensorHandle, TensorAlloc> tensors_;
  TensorHandle next_tensor_ = 1;
  int kv_chunks_ = 0;
  int tensor_chunks_ = 0;
  std::uint64_t kv_live_slots_ = 0;
  int reserve_chunks_ = 0;
  std::optional<int> kv_limit_;
  std::optional<int> tensor_limit_;
  BuddyPool small_;
};

/// KV bytes to hold back for the inference service while the finetune task
/// drains a layer: (swap_out_ms / tpot_ms) * max_bs * per-token KV bytes.
double reserved_bytes(double swap_out_ms, const QosTarget& qos, int max_bs,
                      const ModelSpec& model);

struct ReclaimItem {
  ChunkId chunk = 0;
  double available_at_ms = 0.0;
};

struct ReclaimPlan {
  int immediate_chunks = 0;
  std::vector<ReclaimItem> delayed;
  int total() const { return immediate_chunks + static_cast<int>(delayed.size()); }
};

/// Plans how `chunks_needed` KV chunks are obtained: unassigned chunks
/// (reserve included) immediately, the rest by draining tensor-arena chunks,
/// which become free one swap-out latency after the window shrinks.
ReclaimPlan coordinate_reclaim(const MemoryPool& pool, int chunks_needed, double now_ms,
                               double swap_out_ms);

}  // namespace coloc

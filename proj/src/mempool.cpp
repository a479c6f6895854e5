// SPDX-License-Identifier: Apache-2.0
#include "coloc/mempool.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace coloc {

const char* to_string(ChunkOwner owner) {
  switch (owner) {
    case ChunkOwner::Unassigned: return "unassigned";
    case ChunkOwner::KvCache: return "kv";
    case ChunkOwner::TensorArena: return "tensor";
  }
  return "unknown";
}

MemoryPool::MemoryPool(const GpuSpec& gpu, const ModelSpec& model, const PoolOptions& options)
    : small_(options.small_pool_bytes) {
  model.validate();
  blocks_per_chunk_ = 2 * model.layer_count;
  const std::uint64_t cbytes = chunk_bytes();
  const std::uint64_t outside = options.small_pool_bytes + options.static_reserved_bytes;
  if (outside >= gpu.mem_bytes || gpu.mem_bytes - outside < cbytes) {
    throw Error(ErrorKind::Construction,
                fmt::format("{} bytes of device memory leave no room for one {}-byte chunk "
                            "after {} bytes of reservations",
                            gpu.mem_bytes, cbytes, outside));
  }
  slots_per_chunk_ = cbytes / model.kv_bytes_per_token();
  if (slots_per_chunk_ == 0) {
    throw Error(ErrorKind::Construction, "one token's KV cache does not fit in a chunk");
  }
  const auto n = static_cast<int>((gpu.mem_bytes - outside) / cbytes);
  chunks_.resize(static_cast<std::size_t>(n));
  kv_free_slots_.resize(static_cast<std::size_t>(n));
  kv_slot_live_.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    chunks_[static_cast<std::size_t>(i)].id = i;
    unassigned_.insert(i);
  }
}

const Chunk& MemoryPool::chunk(ChunkId id) const {
  if (id < 0 || id >= chunk_count()) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("chunk id {} out of range", id));
  }
  return chunks_[static_cast<std::size_t>(id)];
}

ChunkId MemoryPool::take_unassigned() {
  const ChunkId id = *unassigned_.begin();
  unassigned_.erase(unassigned_.begin());
  return id;
}

void MemoryPool::give_back(Chunk& c) {
  c.owner = ChunkOwner::Unassigned;
  c.blocks_in_use = 0;
  c.live_slots = 0;
  c.used.clear();
  unassigned_.insert(c.id);
}

ChunkId MemoryPool::kv_acquire_chunk() {
  if (kv_limit_ && kv_chunks_ >= *kv_limit_) {
    throw Error(ErrorKind::CapacityExhausted,
                fmt::format("KV cache already holds its limit of {} chunks", *kv_limit_));
  }
  if (unassigned_.empty()) {
    throw Error(ErrorKind::CapacityExhausted, "no unassigned chunk for the KV cache");
  }
  const ChunkId id = take_unassigned();
  auto& c = chunks_[static_cast<std::size_t>(id)];
  c.owner = ChunkOwner::KvCache;
  c.blocks_in_use = blocks_per_chunk_;
  c.live_slots = 0;
  auto& stack = kv_free_slots_[static_cast<std::size_t>(id)];
  stack.resize(slots_per_chunk_);
  // Popped from the back, so the lowest offset comes out first.
  for (std::size_t i = 0; i < stack.size(); ++i) {
    stack[i] = static_cast<std::uint32_t>(slots_per_chunk_ - 1 - i);
  }
  kv_slot_live_[static_cast<std::size_t>(id)].assign(slots_per_chunk_, false);
  kv_with_room_.insert(id);
  ++kv_chunks_;
  return id;
}

void MemoryPool::kv_release_chunk(ChunkId id) {
  if (id < 0 || id >= chunk_count() ||
      chunks_[static_cast<std::size_t>(id)].owner != ChunkOwner::KvCache) {
    throw Error(ErrorKind::InvalidRelease, fmt::format("chunk {} is not a KV chunk", id));
  }
  auto& c = chunks_[static_cast<std::size_t>(id)];
  if (c.live_slots != 0) {
    throw Error(ErrorKind::InvalidRelease,
                fmt::format("chunk {} still holds {} live KV slots", id, c.live_slots));
  }
  kv_with_room_.erase(id);
  kv_free_slots_[static_cast<std::size_t>(id)].clear();
  kv_slot_live_[static_cast<std::size_t>(id)].clear();
  --kv_chunks_;
  give_back(c);
}

std::optional<KvSlot> MemoryPool::kv_alloc_slot() {
  if (kv_with_room_.empty()) return std::nullopt;
  const ChunkId id = *kv_with_room_.begin();
  auto& stack = kv_free_slots_[static_cast<std::size_t>(id)];
  const std::uint32_t off = stack.back();
  stack.pop_back();
  if (stack.empty()) kv_with_room_.erase(id);
  kv_slot_live_[static_cast<std::size_t>(id)][off] = true;
  ++chunks_[static_cast<std::size_t>(id)].live_slots;
  ++kv_live_slots_;
  return static_cast<KvSlot>(id) * slots_per_chunk_ + off;
}

ChunkId MemoryPool::kv_slot_chunk(KvSlot slot) const {
  return static_cast<ChunkId>(slot / slots_per_chunk_);
}

void MemoryPool::kv_free_slot(KvSlot slot) {
  const ChunkId id = kv_slot_chunk(slot);
  const auto off = static_cast<std::uint32_t>(slot % slots_per_chunk_);
  if (id < 0 || id >= chunk_count() ||
      chunks_[static_cast<std::size_t>(id)].owner != ChunkOwner::KvCache ||
      !kv_slot_live_[static_cast<std::size_t>(id)][off]) {
    throw Error(ErrorKind::InvalidHandle, fmt::format("KV slot {} is not live", slot));
  }
  kv_slot_live_[static_cast<std::size_t>(id)][off] = false;
  kv_free_slots_[static_cast<std::size_t>(id)].push_back(off);
  kv_with_room_.insert(id);
  --chunks_[static_cast<std::size_t>(id)].live_slots;
  --kv_live_slots_;
}

std::vector<ChunkId> MemoryPool::kv_empty_chunks() const {
  std::vector<ChunkId> out;
  for (const auto& c : chunks_) {
    if (c.owner == ChunkOwner::KvCache && c.live_slots == 0) out.push_back(c.id);
  }
  return out;
}

std::optional<TensorAlloc> MemoryPool::tensor_alloc(std::uint64_t bytes) {
  if (bytes == 0) {
    throw Error(ErrorKind::InvalidArgument, "tensor_alloc of zero bytes");
  }
  const auto span64 = (bytes + kBlockBytes - 1) / kBlockBytes;
  if (span64 > static_cast<std::uint64_t>(blocks_per_chunk_)) return std::nullopt;
  const int span = static_cast<int>(span64);

  auto first_fit = [&](Chunk& c) -> int {
    int run = 0;
    for (int b = 0; b < blocks_per_chunk_; ++b) {
      run = c.used[static_cast<std::size_t>(b)] ? 0 : run + 1;
      if (run == span) return b - span + 1;
    }
    return -1;
  };

  Chunk* target = nullptr;
  int first = -1;
  for (auto& c : chunks_) {
    if (c.owner != ChunkOwner::TensorArena || c.blocks_in_use + span > blocks_per_chunk_) {
      continue;
    }
    first = first_fit(c);
    if (first >= 0) {
      target = &c;
      break;
    }
  }
  if (target == nullptr) {
    const bool may_grow = unassigned_chunk_count() > reserve_chunks_ &&
                          (!tensor_limit_ || tensor_chunks_ < *tensor_limit_);
    if (!may_grow) return std::nullopt;
    target = &chunks_[static_cast<std::size_t>(take_unassigned())];
    target->owner = ChunkOwner::TensorArena;
    target->used.assign(static_cast<std::size_t>(blocks_per_chunk_), false);
    ++tensor_chunks_;
    first = 0;
  }
  for (int b = first; b < first + span; ++b) target->used[static_cast<std::size_t>(b)] = true;
  target->blocks_in_use += span;
  TensorAlloc a{next_tensor_++, target->id, first, span, bytes};
  tensors_.emplace(a.handle, a);
  return a;
}

void MemoryPool::tensor_free(TensorHandle handle) {
  auto it = tensors_.find(handle);
  if (it == tensors_.end()) {
    throw Error(ErrorKind::InvalidHandle, fmt::format("tensor handle {} is not live", handle));
  }
  const TensorAlloc a = it->second;
  tensors_.erase(it);
  auto& c = chunks_[static_cast<std::size_t>(a.chunk_id)];
  for (int b = a.first_block; b < a.first_block + a.block_span; ++b) {
    c.used[static_cast<std::size_t>(b)] = false;
  }
  c.blocks_in_use -= a.block_span;
  if (c.blocks_in_use == 0) {
    --tensor_chunks_;
    give_back(c);
  }
}

void MemoryPool::set_reserve_chunks(int chunks) {
  if (chunks < 0) {
    throw Error(ErrorKind::InvalidArgument, "reserve chunk count must be >= 0");
  }
  reserve_chunks_ = chunks;
}

int MemoryPool::tensor_arena_budget_chunks() const {
  int budget = tensor_chunks_ + std::max(0, unassigned_chunk_count() - reserve_chunks_);
  if (tensor_limit_) budget = std::min(budget, *tensor_limit_);
  return budget;
}

BlockCounts MemoryPool::block_counts() const {
  BlockCounts bc;
  const int reserved_chunks = std::min(unassigned_chunk_count(), reserve_chunks_);
  bc.reserved = static_cast<std::int64_t>(reserved_chunks) * blocks_per_chunk_;
  bc.free = static_cast<std::int64_t>(unassigned_chunk_count() - reserved_chunks) *
            blocks_per_chunk_;
  bc.kv = static_cast<std::int64_t>(kv_chunks_) * blocks_per_chunk_;
  for (const auto& c : chunks_) {
    if (c.owner != ChunkOwner::TensorArena) continue;
    bc.tensor += c.blocks_in_use;
    bc.free += blocks_per_chunk_ - c.blocks_in_use;
  }
  return bc;
}

BlockState MemoryPool::block_state(std::int64_t block_id) const {
  if (block_id < 0 || block_id >= total_blocks()) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("block id {} out of range", block_id));
  }
  const auto& c = chunks_[static_cast<std::size_t>(block_id / blocks_per_chunk_)];
  switch (c.owner) {
    case ChunkOwner::KvCache: return BlockState::Kv;
    case ChunkOwner::TensorArena:
      return c.used[static_cast<std::size_t>(block_id % blocks_per_chunk_)] ? BlockState::Tensor
                                                                           : BlockState::Free;
    case ChunkOwner::Unassigned: break;
  }
  return BlockState::Free;
}

void MemoryPool::check_invariants() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidInput, msg); };
  int kv = 0;
  int tensor = 0;
  std::uint64_t live_slots = 0;
  std::vector<std::vector<int>> owner_of(chunks_.size());
  for (const auto& c : chunks_) {
    const bool listed = unassigned_.count(c.id) != 0;
    if ((c.owner == ChunkOwner::Unassigned) != listed) {
      fail(fmt::format("chunk {} owner/unassigned-set mismatch", c.id));
    }
    if ((c.owner == ChunkOwner::Unassigned) != (c.blocks_in_use == 0)) {
      fail(fmt::format("chunk {} owner {} with {} blocks in use", c.id, to_string(c.owner),
                       c.blocks_in_use));
    }
    if (c.blocks_in_use > blocks_per_chunk_) fail(fmt::format("chunk {} over-full", c.id));
    if (c.owner == ChunkOwner::KvCache) {
      ++kv;
      const auto& live = kv_slot_live_[static_cast<std::size_t>(c.id)];
      const auto n = static_cast<int>(std::count(live.begin(), live.end(), true));
      const auto free_n = kv_free_slots_[static_cast<std::size_t>(c.id)].size();
      if (n != c.live_slots || free_n + static_cast<std::size_t>(n) != slots_per_chunk_) {
        fail(fmt::format("chunk {} KV slot accounting broken", c.id));
      }
      if ((free_n > 0) != (kv_with_room_.count(c.id) != 0)) {
        fail(fmt::format("chunk {} KV room index stale", c.id));
      }
      live_slots += static_cast<std::uint64_t>(n);
    } else if (c.owner == ChunkOwner::TensorArena) {
      ++tensor;
      owner_of[static_cast<std::size_t>(c.id)].assign(static_cast<std::size_t>(blocks_per_chunk_),
                                                      0);
      const auto n = static_cast<int>(std::count(c.used.begin(), c.used.end(), true));
      if (n != c.blocks_in_use) fail(fmt::format("chunk {} bitmap/count mismatch", c.id));
    }
  }
  if (kv != kv_chunks_ || tensor != tensor_chunks_ || live_slots != kv_live_slots_) {
    fail("pool counters drifted from chunk table");
  }
  for (const auto& [h, a] : tensors_) {
    if (a.chunk_id < 0 || a.chunk_id >= chunk_count() ||
        chunks_[static_cast<std::size_t>(a.chunk_id)].owner != ChunkOwner::TensorArena) {
      fail(fmt::format("tensor {} points at a non-tensor chunk", h));
    }
    if (static_cast<std::uint64_t>(a.block_span) !=
        (a.requested_bytes + kBlockBytes - 1) / kBlockBytes) {
      fail(fmt::format("tensor {} span does not match its size", h));
    }
    auto& marks = owner_of[static_cast<std::size_t>(a.chunk_id)];
    for (int b = a.first_block; b < a.first_block + a.block_span; ++b) {
      if (b < 0 || b >= blocks_per_chunk_ || marks[static_cast<std::size_t>(b)]++ != 0) {
        fail(fmt::format("tensor {} overlaps another allocation at block {}", h, b));
      }
    }
  }
  for (const auto& c : chunks_) {
    if (c.owner != ChunkOwner::TensorArena) continue;
    for (int b = 0; b < blocks_per_chunk_; ++b) {
      if ((owner_of[static_cast<std::size_t>(c.id)][static_cast<std::size_t>(b)] != 0) !=
          c.used[static_cast<std::size_t>(b)]) {
        fail(fmt::format("chunk {} block {} bitmap disagrees with live tensors", c.id, b));
      }
    }
  }
  if (block_counts().total() != total_blocks()) fail("block conservation broken");
  small_.check_invariants();
}

std::string MemoryPool::snapshot() const {
  std::string out = fmt::format(
      "pool chunks={} blocks_per_chunk={} reserve={} unassigned={} kv={} tensor={} "
      "kv_live_slots={}\n",
      chunk_count(), blocks_per_chunk_, reserve_chunks_, unassigned_chunk_count(), kv_chunks_,
      tensor_chunks_, kv_live_slots_);
  for (const auto& c : chunks_) {
    if (c.owner == ChunkOwner::KvCache) {
      out += fmt::format("chunk {} kv live_slots={}\n", c.id, c.live_slots);
    } else if (c.owner == ChunkOwner::TensorArena) {
      out += fmt::format("chunk {} tensor blocks={}/{}\n", c.id, c.blocks_in_use,
                         blocks_per_chunk_);
    }
  }
  out += fmt::format("small capacity={} live={} fragmentation={}\n", small_.capacity(),
                     small_.live_bytes(), small_.internal_fragmentation());
  return out;
}

double reserved_bytes(double swap_out_ms, const QosTarget& qos, int max_bs,
                      const ModelSpec& model) {
  qos.validate();
  if (swap_out_ms < 0.0 || max_bs < 0) {
    throw Error(ErrorKind::InvalidArgument, "reserved_bytes inputs must be non-negative");
  }
  return swap_out_ms / qos.tpot_ms * max_bs * static_cast<double>(model.kv_bytes_per_token());
}

ReclaimPlan coordinate_reclaim(const MemoryPool& pool, int chunks_needed, double now_ms,
                               double swap_out_ms) {
  if (chunks_needed < 0) {
    throw Error(ErrorKind::InvalidArgument, "chunks_needed must be >= 0");
  }
  int obtainable = pool.unassigned_chunk_count() + pool.tensor_chunk_count();
  if (auto lim = pool.kv_chunk_limit()) {
    obtainable = std::min(obtainable, std::max(0, *lim - pool.kv_chunk_count()));
  }
  if (chunks_needed > obtainable) {
    throw Error(ErrorKind::CapacityExhausted,
                fmt::format("KV demand of {} chunks exceeds the {} obtainable", chunks_needed,
                            obtainable));
  }
  ReclaimPlan plan;
  plan.immediate_chunks = std::min(chunks_needed, pool.unassigned_chunk_count());
  int remaining = chunks_needed - plan.immediate_chunks;
  // Drain from the top, mirroring the lowest-id-first claim order.
  for (ChunkId id = pool.chunk_count() - 1; id >= 0 && remaining > 0; --id) {
    if (pool.chunk(id).owner != ChunkOwner::TensorArena) continue;
    plan.delayed.push_back({id, now_ms + swap_out_ms});
    --remaining;
  }
  return plan;
}

}  // namespace coloc

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace coloc {

/// Buddy allocator for the small-tensor pool.
///
/// Offsets are in bytes from the start of the pool. Every grant is a
/// power-of-two multiple of the minimum order size and is aligned to its own
/// size. Within an order, the lowest free address is handed out first, and a
/// request is served from the smallest order that has a free block.
class BuddyPool {
 public:
  using Handle = std::uint64_t;

  struct Grant {
    Handle handle = 0;
    std::uint64_t offset = 0;
    std::uint64_t granted_bytes = 0;
    std::uint64_t requested_bytes = 0;
  };

  /// `capacity_bytes` must be a power-of-two multiple of `min_block_bytes`.
  explicit BuddyPool(std::uint64_t capacity_bytes, std::uint64_t min_block_bytes = 2048);

  std::optional<Grant> allocate(std::uint64_t bytes);
  void free(Handle handle);

  /// Size a request of `bytes` would be granted, ignoring availability.
  std::uint64_t granted_size(std::uint64_t bytes) const;

  std::uint64_t capacity() const { return capacity_; }
  std::uint64_t min_block() const { return min_block_; }
  std::uint64_t live_bytes() const { return live_bytes_; }
  std::uint64_t requested_live_bytes() const { return requested_live_; }
  std::uint64_t free_bytes() const { return capacity_ - live_bytes_; }
  /// Bytes granted beyond what callers asked for, summed over live grants.
  std::uint64_t internal_fragmentation() const { return live_bytes_ - requested_live_; }
  std::size_t live_count() const { return live_.size(); }
  const std::map<Handle, Grant>& live() const { return live_; }

  /// Free blocks as (offset, order) pairs, ascending by offset.
  std::vector<std::pair<std::uint64_t, int>> free_blocks() const;

  /// Throws if free lists and live grants disagree with the buddy invariants.
  void check_invariants() const;

 private:
  int order_for(std::uint64_t bytes) const;
  std::uint64_t order_bytes(int order) const { return min_block_ << order; }

  std::uint64_t capacity_;
  std::uint64_t min_block_;
  int max_order_;
  std::vector<std::set<std::uint64_t>> free_lists_;
  std::map<Handle, Grant> live_;
  Handle next_handle_ = 1;
  std::uint64_t live_bytes_ = 0;
  std::uint64_t requested_live_ = 0;
};

}  // namespace coloc

// SPDX-License-Identifier: Apache-2.0
#include "coloc/buddy.hpp"

#include <algorithm>
#include <bit>

#include <fmt/format.h>

#include "coloc/core.hpp"

namespace coloc {

BuddyPool::BuddyPool(std::uint64_t capacity_bytes, std::uint64_t min_block_bytes)
    : capacity_(capacity_bytes), min_block_(min_block_bytes) {
  if (min_block_ == 0 || !std::has_single_bit(min_block_)) {
    throw Error(ErrorKind::Construction, "buddy min block must be a power of two");
  }
  if (capacity_ < min_block_ || capacity_ % min_block_ != 0 ||
      !std::has_single_bit(capacity_ / min_block_)) {
    throw Error(ErrorKind::Construction,
                fmt::format("buddy capacity {} is not a power-of-two multiple of {}",
                            capacity_, min_block_));
  }
  max_order_ = std::countr_zero(capacity_ / min_block_);
  free_lists_.resize(static_cast<std::size_t>(max_order_) + 1);
  free_lists_[static_cast<std::size_t>(max_order_)].insert(0);
}

int BuddyPool::order_for(std::uint64_t bytes) const {
  const std::uint64_t units = (bytes + min_block_ - 1) / min_block_;
  return std::countr_zero(std::bit_ceil(std::max<std::uint64_t>(units, 1)));
}

std::uint64_t BuddyPool::granted_size(std::uint64_t bytes) const {
  return order_bytes(order_for(bytes));
}

std::optional<BuddyPool::Grant> BuddyPool::allocate(std::uint64_t bytes) {
  if (bytes == 0 || bytes > capacity_) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("small allocation of {} bytes outside [1, {}]", bytes, capacity_));
  }
  const int want = order_for(bytes);
  int have = want;
  while (have <= max_order_ && free_lists_[static_cast<std::size_t>(have)].empty()) {
    ++have;
  }
  if (have > max_order_) return std::nullopt;

  auto& source = free_lists_[static_cast<std::size_t>(have)];
  const std::uint64_t offset = *source.begin();
  source.erase(source.begin());
  // Split down, keeping the lower half and freeing the upper buddy each time.
  while (have > want) {
    --have;
    free_lists_[static_cast<std::size_t>(have)].insert(offset + order_bytes(have));
  }

  Grant g{next_handle_++, offset, order_bytes(want), bytes};
  live_.emplace(g.handle, g);
  live_bytes_ += g.granted_bytes;
  requested_live_ += g.requested_bytes;
  return g;
}

void BuddyPool::free(Handle handle) {
  auto it = live_.find(handle);
  if (it == live_.end()) {
    throw Error(ErrorKind::InvalidHandle, fmt::format("small pool handle {} is not live", handle));
  }
  std::uint64_t offset = it->second.offset;
  int order = std::countr_zero(it->second.granted_bytes / min_block_);
  live_bytes_ -= it->second.granted_bytes;
  requested_live_ -= it->second.requested_bytes;
  live_.erase(it);

  while (order < max_order_) {
    const std::uint64_t buddy = offset ^ order_bytes(order);
    auto& list = free_lists_[static_cast<std::size_t>(order)];
    auto b = list.find(buddy);
    if (b == list.end()) break;
    list.erase(b);
    offset = std::min(offset, buddy);
    ++order;
  }
  free_lists_[static_cast<std::size_t>(order)].insert(offset);
}

std::vector<std::pair<std::uint64_t, int>> BuddyPool::free_blocks() const {
  std::vector<std::pair<std::uint64_t, int>> out;
  for (int o = 0; o <= max_order_; ++o) {
    for (auto off : free_lists_[static_cast<std::size_t>(o)]) out.emplace_back(off, o);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void BuddyPool::check_invariants() const {
  std::uint64_t free_total = 0;
  for (int o = 0; o <= max_order_; ++o) {
    const auto& list = free_lists_[static_cast<std::size_t>(o)];
    for (auto off : list) {
      if (off % order_bytes(o) != 0) {
        throw Error(ErrorKind::InvalidInput, fmt::format("free block {} misaligned", off));
      }
      if (o < max_order_ && list.count(off ^ order_bytes(o)) != 0) {
        throw Error(ErrorKind::InvalidInput,
                    fmt::format("unmerged free buddies at {} order {}", off, o));
      }
      free_total += order_bytes(o);
    }
  }
  if (free_total + live_bytes_ != capacity_) {
    throw Error(ErrorKind::InvalidInput,
                fmt::format("buddy conservation broken: free {} + live {} != {}", free_total,
                            live_bytes_, capacity_));
  }
  // Free blocks and live grants must tile the pool without overlap.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& [off, order] : free_blocks()) spans.emplace_back(off, order_bytes(order));
  for (const auto& [h, g] : live_) spans.emplace_back(g.offset, g.granted_bytes);
  std::sort(spans.begin(), spans.end());
  std::uint64_t cursor = 0;
  for (const auto& [off, len] : spans) {
    if (off != cursor) {
      throw Error(ErrorKind::InvalidInput, fmt::format("buddy gap/overlap at {}", off));
    }
    cursor = off + len;
  }
}

}  // namespace coloc

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace coloc::testing {

/// Reference buddy allocator over a flat occupancy bitmap.
///
/// A free block of order j exists wherever an aligned run of 2^j units is
/// entirely free and its aligned parent is not. Allocation picks the smallest
/// such order that fits, lowest address first, and occupies the leading
/// 2^k units of it. No free lists, so it shares no state with the real pool.
class BuddyOracle {
 public:
  BuddyOracle(std::uint64_t capacity, std::uint64_t unit) : unit_(unit), used_(capacity / unit) {
    while ((std::uint64_t{1} << max_order_) < used_.size()) ++max_order_;
  }

  std::optional<std::uint64_t> allocate(std::uint64_t bytes) {
    const std::uint64_t units = (bytes + unit_ - 1) / unit_;
    int k = 0;
    while ((std::uint64_t{1} << k) < units) ++k;
    for (int j = k; j <= max_order_; ++j) {
      const std::uint64_t size = std::uint64_t{1} << j;
      for (std::uint64_t off = 0; off < used_.size(); off += size) {
        if (!all_free(off, size)) continue;
        if (j < max_order_) {
          const std::uint64_t parent = off & ~(2 * size - 1);
          if (all_free(parent, 2 * size)) continue;
        }
        const std::uint64_t take = std::uint64_t{1} << k;
        for (std::uint64_t u = off; u < off + take; ++u) used_[u] = true;
        live_[off] = take;
        return off * unit_;
      }
    }
    return std::nullopt;
  }

  void free(std::uint64_t offset_bytes) {
    const std::uint64_t off = offset_bytes / unit_;
    const std::uint64_t take = live_.at(off);
    for (std::uint64_t u = off; u < off + take; ++u) used_[u] = false;
    live_.erase(off);
  }

 private:
  bool all_free(std::uint64_t off, std::uint64_t size) const {
    for (std::uint64_t u = off; u < off + size; ++u) {
      if (used_[u]) return false;
    }
    return true;
  }

  std::uint64_t unit_;
  std::vector<bool> used_;
  int max_order_ = 0;
  std::map<std::uint64_t, std::uint64_t> live_;
};

}  // namespace coloc::testing

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>
#include <vector>

#include "coloc/buddy.hpp"
#include "coloc/core.hpp"
#include "support/buddy_oracle.hpp"

using namespace coloc;

TEST_CASE("buddy grants power-of-two sizes") {
  BuddyPool p(1 * kMiB);
  auto a = p.allocate(3 * kKiB);
  REQUIRE(a);
  CHECK(a->granted_bytes == 4 * kKiB);
  auto b = p.allocate(2 * kKiB);
  REQUIRE(b);
  CHECK(b->granted_bytes == 2 * kKiB);
  auto c = p.allocate(1);
  REQUIRE(c);
  CHECK(c->granted_bytes == 2 * kKiB);
  CHECK(p.internal_fragmentation() == (1 * kKiB) + (2 * kKiB - 1));
  p.check_invariants();
}

TEST_CASE("buddy splits low and merges back") {
  BuddyPool p(16 * kKiB);
  auto a = p.allocate(2 * kKiB);
  auto b = p.allocate(2 * kKiB);
  REQUIRE(a);
  REQUIRE(b);
  CHECK(a->offset == 0);
  CHECK(b->offset == 2 * kKiB);
  p.free(a->handle);
  p.free(b->handle);
  p.check_invariants();
  auto blocks = p.free_blocks();
  REQUIRE(blocks.size() == 1);
  CHECK(blocks[0].first == 0);
  CHECK(p.free_bytes() == 16 * kKiB);
}

TEST_CASE("buddy errors") {
  CHECK_THROWS_AS(BuddyPool(3 * kKiB), Error);
  CHECK_THROWS_AS(BuddyPool(6 * kKiB), Error);
  BuddyPool p(8 * kKiB);
  CHECK_THROWS_AS(p.allocate(0), Error);
  CHECK_THROWS_AS(p.allocate(16 * kKiB), Error);
  auto whole = p.allocate(8 * kKiB);
  REQUIRE(whole);
  CHECK_FALSE(p.allocate(2 * kKiB).has_value());
  p.free(whole->handle);
  try {
    p.free(whole->handle);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidHandle);
  }
}

TEST_CASE("buddy matches the bitmap oracle op by op") {
  const std::uint64_t cap = 1 * kMiB;
  BuddyPool pool(cap);
  testing::BuddyOracle oracle(cap, 2 * kKiB);
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::uint64_t> size(1, 64 * kKiB);
  std::vector<std::pair<BuddyPool::Handle, std::uint64_t>> live;
  for (int op = 0; op < 10000; ++op) {
    const bool do_alloc = live.empty() || rng() % 100 < 55;
    if (do_alloc) {
      const std::uint64_t bytes = size(rng) >> (rng() % 5);
      auto got = pool.allocate(std::max<std::uint64_t>(bytes, 1));
      auto want = oracle.allocate(std::max<std::uint64_t>(bytes, 1));
      REQUIRE(got.has_value() == want.has_value());
      if (got) {
        REQUIRE(got->offset == *want);
        live.emplace_back(got->handle, got->offset);
      }
    } else {
      const std::size_t i = rng() % live.size();
      pool.free(live[i].first);
      oracle.free(live[i].second);
      live[i] = live.back();
      live.pop_back();
    }
    if (op % 97 == 0) pool.check_invariants();
  }
  pool.check_invariants();
}

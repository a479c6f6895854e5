// SPDX-License-Identifier: Apache-2.0
#include "coloc/swap.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>

namespace coloc {

const char* to_string(TransferDirection d) {
  return d == TransferDirection::Evict ? "evict" : "prefetch";
}

SwapManager::SwapManager(MemoryPool& pool, const ModelSpec& model, double h2d_bandwidth,
                         std::uint64_t pinned_bytes)
    : pool_(&pool),
      model_(model),
      h2d_bandwidth_(h2d_bandwidth),
      pinned_bytes_(pinned_bytes),
      window_(model.layer_count),
      states_(static_cast<std::size_t>(model.layer_count), LayerState::Absent),
      tensors_(static_cast<std::size_t>(model.layer_count)) {
  model_.validate();
  if (!(h2d_bandwidth_ > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "h2d bandwidth must be > 0");
  }
}

double SwapManager::transfer_ms() const {
  return static_cast<double>(model_.frozen_bytes_per_layer) / h2d_bandwidth_ * 1000.0;
}

TransferCommand SwapManager::make(int layer, TransferDirection d) const {
  return {layer, d, model_.frozen_bytes_per_layer, transfer_ms()};
}

LayerState SwapManager::state(int layer) const {
  if (layer < 0 || layer >= layer_count()) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("layer {} out of range", layer));
  }
  return states_[static_cast<std::size_t>(layer)];
}

std::vector<int> SwapManager::resident_layers() const {
  std::vector<int> out;
  for (int l = 0; l < layer_count(); ++l) {
    if (states_[static_cast<std::size_t>(l)] == LayerState::Resident) out.push_back(l);
  }
  return out;
}

int SwapManager::window_resize(int available_chunks) {
  const std::uint64_t avail =
      static_cast<std::uint64_t>(std::max(0, available_chunks)) * pool_->chunk_bytes();
  const std::uint64_t usable = avail > pinned_bytes_ ? avail - pinned_bytes_ : 0;
  const std::uint64_t fit = usable / model_.frozen_bytes_per_layer;
  suspended_ = fit == 0;
  window_ = static_cast<int>(std::clamp<std::uint64_t>(
      fit, 1, static_cast<std::uint64_t>(model_.layer_count)));
  return window_;
}

void SwapManager::set_window(int layers) {
  if (layers < 1 || layers > model_.layer_count) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("window {} out of range", layers));
  }
  window_ = layers;
  suspended_ = false;
}

bool SwapManager::allocate_layer(int layer) {
  auto& held = tensors_[static_cast<std::size_t>(layer)];
  std::uint64_t left = model_.frozen_bytes_per_layer;
  // Split into chunk-sized tensors so one layer can span several chunks.
  while (left > 0) {
    const std::uint64_t piece = std::min(left, pool_->chunk_bytes());
    auto a = pool_->tensor_alloc(piece);
    if (!a) {
      free_layer(layer);
      return false;
    }
    held.push_back(a->handle);
    left -= piece;
  }
  return true;
}

void SwapManager::free_layer(int layer) {
  auto& held = tensors_[static_cast<std::size_t>(layer)];
  for (auto h : held) pool_->tensor_free(h);
  held.clear();
}

void SwapManager::preload(std::span<const int> upcoming) {
  std::vector<bool> seen(states_.size(), false);
  int placed = 0;
  for (int l : upcoming) {
    if (placed == window_) break;
    if (seen[static_cast<std::size_t>(l)]) continue;
    seen[static_cast<std::size_t>(l)] = true;
    if (state(l) == LayerState::Absent) {
      if (!allocate_layer(l)) break;
      states_[static_cast<std::size_t>(l)] = LayerState::Resident;
    }
    ++placed;
  }
}

std::vector<TransferCommand> SwapManager::plan(std::span<const int> upcoming,
                                               std::optional<int> computing) {
  const auto n = static_cast<std::size_t>(layer_count());
  constexpr int kNever = std::numeric_limits<int>::max();
  std::vector<int> next_use(n, kNever);
  std::vector<int> desired;
  std::vector<bool> wanted(n, false);
  int pos = 0;
  auto consider = [&](int l) {
    if (l < 0 || l >= layer_count()) {
      throw Error(ErrorKind::InvalidArgument, fmt::format("layer {} out of range", l));
    }
    auto& nu = next_use[static_cast<std::size_t>(l)];
    if (nu == kNever) nu = pos;
    ++pos;
    if (!wanted[static_cast<std::size_t>(l)] && static_cast<int>(desired.size()) < window_) {
      wanted[static_cast<std::size_t>(l)] = true;
      desired.push_back(l);
    }
  };
  if (computing) consider(*computing);
  for (int l : upcoming) consider(l);

  // Drop queued work that the new window contradicts.
  std::deque<TransferCommand> kept;
  for (const auto& cmd : queue_) {
    const auto l = static_cast<std::size_t>(cmd.layer);
    if (cmd.direction == TransferDirection::Prefetch && !wanted[l]) {
      free_layer(cmd.layer);
      states_[l] = LayerState::Absent;
    } else if (cmd.direction == TransferDirection::Evict && wanted[l]) {
      states_[l] = LayerState::Resident;
    } else {
      kept.push_back(cmd);
    }
  }
  queue_ = std::move(kept);

  std::vector<TransferCommand> issued;
  std::vector<int> victims;
  for (int l = 0; l < layer_count(); ++l) {
    if (states_[static_cast<std::size_t>(l)] == LayerState::Resident &&
        !wanted[static_cast<std::size_t>(l)] && (!computing || *computing != l)) {
      victims.push_back(l);
    }
  }
  // Farthest next use goes first; never-used layers first of all, highest index leading.
  std::sort(victims.begin(), victims.end(), [&](int a, int b) {
    const int na = next_use[static_cast<std::size_t>(a)];
    const int nb = next_use[static_cast<std::size_t>(b)];
    if (na != nb) return na > nb;
    return a > b;
  });
  auto first_prefetch = std::find_if(queue_.begin(), queue_.end(), [](const auto& c) {
    return c.direction == TransferDirection::Prefetch;
  });
  auto insert_at = static_cast<std::size_t>(first_prefetch - queue_.begin());
  for (int v : victims) {
    states_[static_cast<std::size_t>(v)] = LayerState::Evicting;
    const auto cmd = make(v, TransferDirection::Evict);
    queue_.insert(queue_.begin() + static_cast<std::ptrdiff_t>(insert_at++), cmd);
    issued.push_back(cmd);
  }

  int occupancy = 0;
  for (auto s : states_) {
    if (s == LayerState::Resident || s == LayerState::Prefetching) ++occupancy;
  }
  for (int l : desired) {
    if (occupancy >= window_) break;
    if (states_[static_cast<std::size_t>(l)] != LayerState::Absent) continue;
    if (!allocate_layer(l)) break;
    states_[static_cast<std::size_t>(l)] = LayerState::Prefetching;
    const auto cmd = make(l, TransferDirection::Prefetch);
    queue_.push_back(cmd);
    issued.push_back(cmd);
    ++occupancy;
  }
  return issued;
}

std::vector<TransferCommand> SwapManager::on_layer_complete(int layer) {
  if (state(layer) != LayerState::Resident) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("layer {} completed without being resident", layer));
  }
  std::vector<int> ring;
  ring.reserve(static_cast<std::size_t>(layer_count()));
  for (int i = 1; i <= layer_count(); ++i) ring.push_back((layer + i) % layer_count());
  return plan(ring);
}

std::optional<TransferCommand> SwapManager::start_next() {
  if (in_flight_ || queue_.empty()) return std::nullopt;
  in_flight_ = queue_.front();
  queue_.pop_front();
  return in_flight_;
}

TransferCommand SwapManager::finish_in_flight() {
  if (!in_flight_) {
    throw Error(ErrorKind::InvalidArgument, "no transfer in flight");
  }
  const TransferCommand cmd = *in_flight_;
  in_flight_.reset();
  auto& s = states_[static_cast<std::size_t>(cmd.layer)];
  if (cmd.direction == TransferDirection::Evict) {
    free_layer(cmd.layer);
    s = LayerState::Absent;
  } else {
    s = LayerState::Resident;
  }
  ++swap_count_;
  bytes_moved_ += cmd.bytes;
  return cmd;
}

void SwapManager::clear() {
  for (int l = 0; l < layer_count(); ++l) {
    free_layer(l);
    states_[static_cast<std::size_t>(l)] = LayerState::Absent;
  }
  queue_.clear();
  in_flight_.reset();
}

void SwapManager::check_invariants() const {
  for (int l = 0; l < layer_count(); ++l) {
    const auto s = states_[static_cast<std::size_t>(l)];
    const bool holds = !tensors_[static_cast<std::size_t>(l)].empty();
    if ((s == LayerState::Absent) == holds) {
      throw Error(ErrorKind::InvalidInput,
                  fmt::format("layer {} tensor ownership disagrees with its state", l));
    }
    for (auto h : tensors_[static_cast<std::size_t>(l)]) {
      if (pool_->live_tensors().count(h) == 0) {
        throw Error(ErrorKind::InvalidInput, fmt::format("layer {} holds dead tensor {}", l, h));
      }
    }
  }
  if (bytes_moved_ != swap_count_ * model_.frozen_bytes_per_layer) {
    throw Error(ErrorKind::InvalidInput, "swap byte accounting broken");
  }
}

}  // namespace coloc

// Copyright 2026 The asr-toolkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "asr/memarena.hpp"

#include <cstring>
#include <new>
#include <sstream>

namespace asr::memarena {

namespace {

constexpr size_t kNone = static_cast<size_t>(-1);

bool is_pow2(size_t v) { return v != 0 && (v & (v - 1)) == 0; }

size_t next_pow2(size_t v) {
  size_t p = 1;
  while (p < v) p <<= 1;
  return p;
}

size_t log2_exact(size_t v) {
  size_t k = 0;
  while ((size_t(1) << k) < v) ++k;
  return k;
}

// Intrusive doubly-linked free-list node, stored in the block itself.
struct FreeNode {
  size_t next;
  size_t prev;
};

}  // namespace

Arena::Arena(const ArenaConfig& cfg)
    : capacity_(cfg.capacity), min_block_(cfg.min_block), fallback_capacity_(cfg.fallback_capacity) {
  ASR_REQUIRE(is_pow2(capacity_), "arena: capacity must be a power of two");
  ASR_REQUIRE(is_pow2(min_block_) && min_block_ >= sizeof(FreeNode),
              "arena: min_block must be a power of two of at least 16 bytes");
  ASR_REQUIRE(capacity_ >= min_block_, "arena: capacity below min_block");

  orders_ = log2_exact(capacity_ / min_block_) + 1;
  memory_.resize(capacity_);
  free_heads_.assign(orders_, kNone);
  alloc_order_.assign(capacity_ / min_block_, -1);
  free_order_.assign(capacity_ / min_block_, -1);
  push_free(0, orders_ - 1);  // one maximal free block

  // Everything after this point is warmup-free: no member ever grows.
}

Arena::~Arena() = default;

size_t Arena::order_of(size_t rounded) const { return log2_exact(rounded / min_block_); }

size_t Arena::buddy_of(size_t offset, size_t order) const {
  return offset ^ (min_block_ << order);
}

void Arena::push_free(size_t offset, size_t order) {
  FreeNode* node = reinterpret_cast<FreeNode*>(memory_.data() + offset);
  node->next = free_heads_[order];
  node->prev = kNone;
  if (free_heads_[order] != kNone)
    reinterpret_cast<FreeNode*>(memory_.data() + free_heads_[order])->prev = offset;
  free_heads_[order] = offset;
  free_order_[offset / min_block_] = static_cast<int8_t>(order);
}

void Arena::unlink_free(size_t offset, size_t order) {
  FreeNode* node = reinterpret_cast<FreeNode*>(memory_.data() + offset);
  if (node->prev != kNone) {
    reinterpret_cast<FreeNode*>(memory_.data() + node->prev)->next = node->next;
  } else {
    free_heads_[order] = node->next;
  }
  if (node->next != kNone)
    reinterpret_cast<FreeNode*>(memory_.data() + node->next)->prev = node->prev;
  free_order_[offset / min_block_] = -1;
}

BlockHandle Arena::alloc(size_t size) {
  ASR_REQUIRE(size > 0, "arena: zero-size allocation");
  size_t rounded = next_pow2(std::max(size, min_block_));

  BlockHandle handle;
  handle.size = rounded;
  handle.requested = size;

  if (rounded <= capacity_) {
    size_t want = order_of(rounded);
    size_t order = want;
    while (order < orders_ && free_heads_[order] == kNone) ++order;
    if (order < orders_) {
      size_t offset = free_heads_[order];
      unlink_free(offset, order);
      // Split down to the wanted order; the upper half goes back free.
      while (order > want) {
        --order;
        push_free(offset + (min_block_ << order), order);
      }
      alloc_order_[offset / min_block_] = static_cast<int8_t>(want);
      handle.offset = offset;
      ++stats_.allocs;
      stats_.live_bytes += rounded;
      stats_.requested_live_bytes += size;
      return handle;
    }
  }

  // Arena exhausted (or the request exceeds the whole arena): hand out a
  // tagged block from the secondary pool.
  ASR_REQUIRE(stats_.fallback_live_bytes + rounded <= fallback_capacity_,
              "arena: out of memory (fallback pool exhausted)");
  handle.fallback_ptr = ::operator new(rounded);
  ++stats_.allocs;
  ++stats_.fallback_allocs;
  stats_.fallback_live_bytes += rounded;
  return handle;
}

void Arena::free(const BlockHandle& handle) {
  if (handle.is_fallback()) {
    ::operator delete(handle.fallback_ptr);
    ++stats_.frees;
    ++stats_.fallback_frees;
    ASR_REQUIRE(stats_.fallback_live_bytes >= handle.size, "arena: fallback accounting underflow");
    stats_.fallback_live_bytes -= handle.size;
    return;
  }

  ASR_REQUIRE(handle.offset < capacity_ && handle.offset % min_block_ == 0,
              "arena: foreign handle (offset outside the arena)");
  size_t unit = handle.offset / min_block_;
  size_t order = order_of(handle.size);
  ASR_REQUIRE(alloc_order_[unit] >= 0, "arena: double free or foreign handle");
  ASR_REQUIRE(static_cast<size_t>(alloc_order_[unit]) == order,
              "arena: handle size does not match the live block");
  alloc_order_[unit] = -1;

  stats_.live_bytes -= handle.size;
  stats_.requested_live_bytes -= handle.requested;
  ++stats_.frees;

  // Coalesce with free buddies transitively.
  size_t offset = handle.offset;
  while (order + 1 < orders_) {
    size_t buddy = buddy_of(offset, order);
    if (free_order_[buddy / min_block_] != static_cast<int8_t>(order)) break;
    unlink_free(buddy, order);
    offset = std::min(offset, buddy);
    ++order;
  }
  push_free(offset, order);
}

void* Arena::data(const BlockHandle& handle) {
  if (handle.is_fallback()) return handle.fallback_ptr;
  ASR_REQUIRE(handle.offset + handle.size <= capacity_, "arena: handle out of range");
  return memory_.data() + handle.offset;
}

bool Arena::is_single_free_block() const {
  for (size_t order = 0; order + 1 < orders_; ++order)
    if (free_heads_[order] != kNone) return false;
  size_t head = free_heads_[orders_ - 1];
  if (head != 0) return false;
  return reinterpret_cast<const FreeNode*>(memory_.data() + head)->next == kNone;
}

std::string Arena::dump_stats() const {
  std::ostringstream os;
  os << "capacity=" << capacity_ << "\n";
  os << "min_block=" << min_block_ << "\n";
  os << "allocs=" << stats_.allocs << "\n";
  os << "frees=" << stats_.frees << "\n";
  os << "fallback_allocs=" << stats_.fallback_allocs << "\n";
  os << "fallback_frees=" << stats_.fallback_frees << "\n";
  os << "system_calls_after_warmup=" << stats_.system_calls_after_warmup << "\n";
  os << "live_bytes=" << stats_.live_bytes << "\n";
  os << "requested_live_bytes=" << stats_.requested_live_bytes << "\n";
  os << "internal_fragmentation_bytes=" << (stats_.live_bytes - stats_.requested_live_bytes) << "\n";
  os << "free_bytes=" << free_bytes() << "\n";
  os << "fallback_live_bytes=" << stats_.fallback_live_bytes << "\n";
  return os.str();
}

bool Arena::check_consistency() const {
  // Walk every free list; each entry must carry the matching order mark.
  size_t free_total = 0;
  for (size_t order = 0; order < orders_; ++order) {
    size_t seen = 0;
    for (size_t cur = free_heads_[order]; cur != kNone;
         cur = reinterpret_cast<const FreeNode*>(memory_.data() + cur)->next) {
      if (cur % (min_block_ << order) != 0) return false;
      if (free_order_[cur / min_block_] != static_cast<int8_t>(order)) return false;
      free_total += min_block_ << order;
      if (++seen > capacity_ / min_block_) return false;  // cycle guard
    }
  }
  // Marked free heads must all be reachable (counted once by size).
  size_t marked = 0;
  for (size_t unit = 0; unit < free_order_.size(); ++unit)
    if (free_order_[unit] >= 0) marked += min_block_ << free_order_[unit];
  if (marked != free_total) return false;
  return free_total == free_bytes();
}

}  // namespace asr::memarena

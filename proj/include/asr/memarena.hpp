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

#ifndef ASR_MEMARENA_HPP
#define ASR_MEMARENA_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "asr/common.hpp"

namespace asr::memarena {

struct ArenaConfig {
  size_t capacity = 64ull << 20;  // power of two
  size_t min_block = 256;         // power of two, >= 16
  size_t fallback_capacity = 1ull << 30;
};

struct BlockHandle {
  size_t offset = 0;        // within the arena; unused for fallback blocks
  size_t size = 0;          // rounded power-of-two capacity
  size_t requested = 0;     // original request
  void* fallback_ptr = nullptr;

  bool is_fallback() const { return fallback_ptr != nullptr; }
};

struct ArenaStats {
  long allocs = 0;
  long frees = 0;
  long fallback_allocs = 0;
  long fallback_frees = 0;
  // System-allocator invocations on the arena path after construction.
  // Stays zero by construction; the counter exists so tests can assert it.
  long system_calls_after_warmup = 0;
  size_t live_bytes = 0;          // rounded sizes of live arena blocks
  size_t requested_live_bytes = 0;
  size_t fallback_live_bytes = 0;
};

// Buddy-algorithm arena over one preallocated contiguous block. Free lists
// are intrusive (stored inside free blocks) and all bookkeeping arrays are
// sized at construction, so steady-state operation never touches the
// system allocator. When the arena cannot satisfy a request the block
// comes from a tagged fallback pool instead; fallback handles never alias
// arena addresses. Single-owner: not thread safe.
class Arena {
 public:
  explicit Arena(const ArenaConfig& cfg = {});
  ~Arena();
  Arena(const Arena&) = delete;
  Arena& operator=(const Arena&) = delete;

  // Returns a block of the next power-of-two capacity >= max(size,
  // min_block). Throws only when the fallback pool is exhausted too.
  BlockHandle alloc(size_t size);

  // Returns the block and coalesces free buddies transitively. Double
  // frees and foreign handles throw.
  void free(const BlockHandle& handle);

  void* data(const BlockHandle& handle);

  size_t capacity() const { return capacity_; }
  size_t min_block() const { return min_block_; }
  size_t free_bytes() const { return capacity_ - stats_.live_bytes; }
  const ArenaStats& stats() const { return stats_; }

  // True when the arena has fully coalesced back into one maximal block.
  bool is_single_free_block() const;

  // key=value lines.
  std::string dump_stats() const;

  // Validation helpers for tests: every free block appears in exactly one
  // free list and free/live accounting matches the block states.
  bool check_consistency() const;

 private:
  size_t order_of(size_t rounded) const;
  size_t buddy_of(size_t offset, size_t order) const;
  void push_free(size_t offset, size_t order);
  void unlink_free(size_t offset, size_t order);

  size_t capacity_ = 0;
  size_t min_block_ = 0;
  size_t fallback_capacity_ = 0;
  size_t orders_ = 0;  // number of block orders
  std::vector<uint8_t> memory_;
  std::vector<size_t> free_heads_;   // per order, offset or kNone
  std::vector<int8_t> alloc_order_;  // per min-block unit: order of an allocated head, else -1
  std::vector<int8_t> free_order_;   // per min-block unit: order of a free head, else -1
  ArenaStats stats_;
};

}  // namespace asr::memarena

#endif  // ASR_MEMARENA_HPP

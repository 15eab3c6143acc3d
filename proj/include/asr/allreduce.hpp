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

#ifndef ASR_ALLREDUCE_HPP
#define ASR_ALLREDUCE_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "asr/common.hpp"

namespace asr::allreduce {

// Reliable, ordered, message-boundary-preserving point-to-point links.
// One instance belongs to one worker; sends and receives may run on the
// worker's thread concurrently with other workers' calls.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(int peer, const void* data, size_t bytes) = 0;
  virtual std::vector<uint8_t> receive(int peer) = 0;

  long messages_sent() const { return messages_sent_; }
  long payload_bytes_sent() const { return payload_bytes_sent_; }
  void reset_counters() {
    messages_sent_ = 0;
    payload_bytes_sent_ = 0;
  }

 protected:
  void count_send(size_t bytes) {
    ++messages_sent_;
    payload_bytes_sent_ += static_cast<long>(bytes);
  }

  long messages_sent_ = 0;
  long payload_bytes_sent_ = 0;
};

// Shared-memory transport for in-process workers: one bounded queue per
// directed link. Optional seeded random delays perturb scheduling for
// deadlock fuzzing without affecting results.
class InProcessHub {
 public:
  explicit InProcessHub(int workers, uint64_t delay_seed = 0, int max_delay_us = 0);
  ~InProcessHub();

  int workers() const;
  Transport& transport(int rank);

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

// TCP transport for one worker of a ring. `addresses` maps rank to
// "host:port"; the constructor binds its own address, dials the successor
// and accepts the predecessor. Frames are [u32 length][payload],
// little-endian. Only the two ring neighbors are reachable.
std::unique_ptr<Transport> make_socket_transport(int rank, const std::vector<std::string>& addresses,
                                                 int timeout_ms = 30000);

// Parses "rank host:port" lines into an address list.
std::vector<std::string> parse_address_file(const std::string& path);

struct RingTopology {
  int rank = 0;
  int size = 1;

  int successor() const { return (rank + 1) % size; }
  int predecessor() const { return (rank + size - 1) % size; }

  // Near-equal partition of n elements into `size` segments.
  static std::pair<size_t, size_t> segment(size_t n, int size, int index);
};

// Chunked ring all-reduce: N-1 reduce-scatter steps followed by N-1
// all-gather steps. Every worker ends with the element-wise sum. The
// reduction of segment s is the left fold over ranks s, s+1, ... (mod N),
// a fixed order that makes results deterministic and repeatable.
void ring_allreduce(std::vector<real>& values, const RingTopology& topo, Transport& transport);

struct BenchRow {
  size_t elements = 0;
  int workers = 0;
  double seconds = 0;
  double mb_per_s = 0;
  long messages_per_worker = 0;
  long payload_bytes_per_worker = 0;
};

// Times the in-process ring over a grid of sizes and worker counts.
std::vector<BenchRow> bench_allreduce(const std::vector<size_t>& sizes,
                                      const std::vector<int>& worker_counts, int repeats = 3);

}  // namespace asr::allreduce

#endif  // ASR_ALLREDUCE_HPP

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

#include "asr/allreduce.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace asr::allreduce {

// ---------------------------------------------------------------------------
// In-process hub

namespace {

struct Mailbox {
  std::mutex mu;
  std::condition_variable not_empty;
  std::condition_variable not_full;
  std::deque<std::vector<uint8_t>> queue;
  static constexpr size_t kCapacity = 64;
};

}  // namespace

struct InProcessHub::Impl {
  int workers;
  int max_delay_us;
  std::vector<std::unique_ptr<Mailbox>> boxes;  // [src * workers + dst]
  std::vector<std::unique_ptr<Transport>> transports;
  std::vector<Rng> delay_rngs;
  std::mutex rng_mu;

  Mailbox& box(int src, int dst) { return *boxes[static_cast<size_t>(src) * workers + dst]; }

  void maybe_delay(int rank) {
    if (max_delay_us <= 0) return;
    int us;
    {
      std::lock_guard<std::mutex> lock(rng_mu);
      us = static_cast<int>(delay_rngs[rank].below(max_delay_us + 1));
    }
    if (us > 0) std::this_thread::sleep_for(std::chrono::microseconds(us));
  }
};

namespace {

class InProcessTransport : public Transport {
 public:
  InProcessTransport(InProcessHub::Impl* hub, int rank) : hub_(hub), rank_(rank) {}

  void send(int peer, const void* data, size_t bytes) override {
    ASR_REQUIRE(peer >= 0 && peer < hub_->workers && peer != rank_, "transport: bad peer rank");
    hub_->maybe_delay(rank_);
    Mailbox& box = hub_->box(rank_, peer);
    std::vector<uint8_t> msg(static_cast<const uint8_t*>(data),
                             static_cast<const uint8_t*>(data) + bytes);
    {
      std::unique_lock<std::mutex> lock(box.mu);
      box.not_full.wait(lock, [&] { return box.queue.size() < Mailbox::kCapacity; });
      box.queue.push_back(std::move(msg));
    }
    box.not_empty.notify_one();
    count_send(bytes);
  }

  std::vector<uint8_t> receive(int peer) override {
    ASR_REQUIRE(peer >= 0 && peer < hub_->workers && peer != rank_, "transport: bad peer rank");
    hub_->maybe_delay(rank_);
    Mailbox& box = hub_->box(peer, rank_);
    std::vector<uint8_t> msg;
    {
      std::unique_lock<std::mutex> lock(box.mu);
      box.not_empty.wait(lock, [&] { return !box.queue.empty(); });
      msg = std::move(box.queue.front());
      box.queue.pop_front();
    }
    box.not_full.notify_one();
    return msg;
  }

 private:
  InProcessHub::Impl* hub_;
  int rank_;
};

}  // namespace

InProcessHub::InProcessHub(int workers, uint64_t delay_seed, int max_delay_us) : impl_(new Impl) {
  ASR_REQUIRE(workers >= 1, "InProcessHub: need at least one worker");
  impl_->workers = workers;
  impl_->max_delay_us = max_delay_us;
  impl_->boxes.resize(static_cast<size_t>(workers) * workers);
  for (auto& b : impl_->boxes) b = std::make_unique<Mailbox>();
  for (int r = 0; r < workers; ++r) {
    impl_->delay_rngs.emplace_back(delay_seed * 1000003ULL + r);
    impl_->transports.push_back(std::make_unique<InProcessTransport>(impl_.get(), r));
  }
}

InProcessHub::~InProcessHub() = default;

int InProcessHub::workers() const { return impl_->workers; }

Transport& InProcessHub::transport(int rank) {
  ASR_REQUIRE(rank >= 0 && rank < impl_->workers, "InProcessHub: rank out of range");
  return *impl_->transports[rank];
}

// ---------------------------------------------------------------------------
// Socket transport

namespace {

struct FdCloser {
  int fd = -1;
  ~FdCloser() {
    if (fd >= 0) ::close(fd);
  }
};

void put_u32_le(uint8_t* p, uint32_t v) {
  p[0] = static_cast<uint8_t>(v);
  p[1] = static_cast<uint8_t>(v >> 8);
  p[2] = static_cast<uint8_t>(v >> 16);
  p[3] = static_cast<uint8_t>(v >> 24);
}

uint32_t get_u32_le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

void write_all(int fd, const uint8_t* data, size_t bytes) {
  while (bytes > 0) {
    ssize_t n = ::send(fd, data, bytes, MSG_NOSIGNAL);
    ASR_REQUIRE(n > 0, "socket transport: send failed or peer disconnected");
    data += n;
    bytes -= static_cast<size_t>(n);
  }
}

void read_all(int fd, uint8_t* data, size_t bytes) {
  while (bytes > 0) {
    ssize_t n = ::recv(fd, data, bytes, 0);
    ASR_REQUIRE(n > 0, n == 0 ? "socket transport: peer disconnected"
                              : "socket transport: receive timed out or failed");
    data += n;
    bytes -= static_cast<size_t>(n);
  }
}

std::pair<std::string, int> split_host_port(const std::string& addr) {
  auto colon = addr.rfind(':');
  ASR_REQUIRE(colon != std::string::npos, "socket transport: address needs host:port, got " + addr);
  return {addr.substr(0, colon), std::stoi(addr.substr(colon + 1))};
}

class SocketTransport : public Transport {
 public:
  SocketTransport(int rank, const std::vector<std::string>& addresses, int timeout_ms)
      : rank_(rank), size_(static_cast<int>(addresses.size())), timeout_ms_(timeout_ms) {
    ASR_REQUIRE(size_ >= 2, "socket transport: need at least two ranks");
    ASR_REQUIRE(rank >= 0 && rank < size_, "socket transport: rank out of range");
    successor_ = (rank_ + 1) % size_;
    predecessor_ = (rank_ + size_ - 1) % size_;

    auto [host, port] = split_host_port(addresses[rank_]);
    FdCloser listener;
    listener.fd = ::socket(AF_INET, SOCK_STREAM, 0);
    ASR_REQUIRE(listener.fd >= 0, "socket transport: cannot create listener");
    int one = 1;
    ::setsockopt(listener.fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in self{};
    self.sin_family = AF_INET;
    self.sin_port = htons(static_cast<uint16_t>(port));
    self.sin_addr.s_addr = host == "0.0.0.0" || host.empty() ? INADDR_ANY : inet_addr(host.c_str());
    ASR_REQUIRE(::bind(listener.fd, reinterpret_cast<sockaddr*>(&self), sizeof(self)) == 0,
                "socket transport: bind failed for " + addresses[rank_]);
    ASR_REQUIRE(::listen(listener.fd, 4) == 0, "socket transport: listen failed");

    // Dial the successor with retries (it may not be listening yet), then
    // take the predecessor's incoming connection.
    auto [shost, sport] = split_host_port(addresses[successor_]);
    send_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    ASR_REQUIRE(send_fd_ >= 0, "socket transport: cannot create socket");
    sockaddr_in peer{};
    peer.sin_family = AF_INET;
    peer.sin_port = htons(static_cast<uint16_t>(sport));
    peer.sin_addr.s_addr = inet_addr(shost == "localhost" ? "127.0.0.1" : shost.c_str());
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms_);
    while (::connect(send_fd_, reinterpret_cast<sockaddr*>(&peer), sizeof(peer)) != 0) {
      ASR_REQUIRE(std::chrono::steady_clock::now() < deadline,
                  "socket transport: connect to successor timed out");
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      ::close(send_fd_);
      send_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    }
    ::setsockopt(send_fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));

    timeval tv{};
    tv.tv_sec = timeout_ms_ / 1000;
    tv.tv_usec = (timeout_ms_ % 1000) * 1000;
    ::setsockopt(listener.fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    recv_fd_ = ::accept(listener.fd, nullptr, nullptr);
    ASR_REQUIRE(recv_fd_ >= 0, "socket transport: accept from predecessor timed out");
    ::setsockopt(recv_fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    ::setsockopt(recv_fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }

  ~SocketTransport() override {
    if (send_fd_ >= 0) ::close(send_fd_);
    if (recv_fd_ >= 0) ::close(recv_fd_);
  }

  void send(int peer, const void* data, size_t bytes) override {
    ASR_REQUIRE(peer == successor_, "socket transport: only the ring successor is dialable");
    std::vector<uint8_t> frame(4 + bytes);
    put_u32_le(frame.data(), static_cast<uint32_t>(bytes));
    std::memcpy(frame.data() + 4, data, bytes);
    write_all(send_fd_, frame.data(), frame.size());
    count_send(bytes);
  }

  std::vector<uint8_t> receive(int peer) override {
    ASR_REQUIRE(peer == predecessor_, "socket transport: only the ring predecessor sends to us");
    uint8_t header[4];
    read_all(recv_fd_, header, 4);
    std::vector<uint8_t> payload(get_u32_le(header));
    if (!payload.empty()) read_all(recv_fd_, payload.data(), payload.size());
    return payload;
  }

 private:
  int rank_, size_, timeout_ms_;
  int successor_, predecessor_;
  int send_fd_ = -1, recv_fd_ = -1;
};

}  // namespace

std::unique_ptr<Transport> make_socket_transport(int rank, const std::vector<std::string>& addresses,
                                                 int timeout_ms) {
  return std::make_unique<SocketTransport>(rank, addresses, timeout_ms);
}

std::vector<std::string> parse_address_file(const std::string& path) {
  std::ifstream is(path);
  ASR_REQUIRE(is.good(), "cannot open address file " + path);
  std::vector<std::string> addresses;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int rank;
    std::string addr;
    ASR_REQUIRE(static_cast<bool>(ls >> rank >> addr), "malformed address line: " + line);
    if (static_cast<int>(addresses.size()) <= rank) addresses.resize(rank + 1);
    addresses[rank] = addr;
  }
  for (size_t r = 0; r < addresses.size(); ++r)
    ASR_REQUIRE(!addresses[r].empty(), "address file is missing rank " + std::to_string(r));
  return addresses;
}

// ---------------------------------------------------------------------------
// Ring all-reduce

std::pair<size_t, size_t> RingTopology::segment(size_t n, int size, int index) {
  size_t base = n / size;
  size_t rem = n % size;
  size_t begin = static_cast<size_t>(index) * base + std::min(static_cast<size_t>(index), rem);
  size_t len = base + (static_cast<size_t>(index) < rem ? 1 : 0);
  return {begin, begin + len};
}

void ring_allreduce(std::vector<real>& values, const RingTopology& topo, Transport& transport) {
  int n_workers = topo.size;
  ASR_REQUIRE(n_workers >= 1, "ring_allreduce: empty ring");
  if (n_workers == 1) return;

  auto seg_bytes = [&](int idx) {
    auto [b, e] = RingTopology::segment(values.size(), n_workers, idx);
    return std::pair<size_t, size_t>(b * sizeof(real), (e - b) * sizeof(real));
  };

  // Reduce-scatter: after step k every worker holds a partial sum of one
  // more rank for the segment it just received. Segment s is accumulated
  // in ring order starting at its owner: v_s, then v_{s+1}, ...
  for (int k = 0; k < n_workers - 1; ++k) {
    int send_idx = (topo.rank - k + n_workers) % n_workers;
    int recv_idx = (topo.rank - k - 1 + n_workers) % n_workers;
    auto [send_off, send_len] = seg_bytes(send_idx);
    transport.send(topo.successor(), reinterpret_cast<uint8_t*>(values.data()) + send_off, send_len);

    std::vector<uint8_t> incoming = transport.receive(topo.predecessor());
    auto [recv_off, recv_len] = seg_bytes(recv_idx);
    ASR_REQUIRE(incoming.size() == recv_len, "ring_allreduce: segment length mismatch from peer");
    const real* partial = reinterpret_cast<const real*>(incoming.data());
    real* mine = values.data() + recv_off / sizeof(real);
    size_t count = recv_len / sizeof(real);
    for (size_t i = 0; i < count; ++i) mine[i] = partial[i] + mine[i];
  }

  // All-gather: circulate the finished segments.
  for (int k = 0; k < n_workers - 1; ++k) {
    int send_idx = (topo.rank + 1 - k + n_workers) % n_workers;
    int recv_idx = (topo.rank - k + n_workers) % n_workers;
    auto [send_off, send_len] = seg_bytes(send_idx);
    transport.send(topo.successor(), reinterpret_cast<uint8_t*>(values.data()) + send_off, send_len);

    std::vector<uint8_t> incoming = transport.receive(topo.predecessor());
    auto [recv_off, recv_len] = seg_bytes(recv_idx);
    ASR_REQUIRE(incoming.size() == recv_len, "ring_allreduce: segment length mismatch from peer");
    std::memcpy(reinterpret_cast<uint8_t*>(values.data()) + recv_off, incoming.data(), recv_len);
  }
}

std::vector<BenchRow> bench_allreduce(const std::vector<size_t>& sizes,
                                      const std::vector<int>& worker_counts, int repeats) {
  std::vector<BenchRow> rows;
  for (size_t elements : sizes) {
    for (int n : worker_counts) {
      InProcessHub hub(n);
      Rng rng(1234);
      std::vector<std::vector<real>> data(n, std::vector<real>(elements));
      for (auto& vec : data)
        for (auto& v : vec) v = static_cast<real>(rng.uniform(-1, 1));

      for (int r = 0; r < n; ++r) hub.transport(r).reset_counters();
      auto started = std::chrono::steady_clock::now();
      for (int rep = 0; rep < repeats; ++rep) {
        std::vector<std::thread> threads;
        auto work = data;  // fresh copy each repetition
        for (int r = 0; r < n; ++r)
          threads.emplace_back([&, r] { ring_allreduce(work[r], {r, n}, hub.transport(r)); });
        for (auto& th : threads) th.join();
      }
      double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() /
                       std::max(1, repeats);

      BenchRow row;
      row.elements = elements;
      row.workers = n;
      row.seconds = seconds;
      double bytes = static_cast<double>(elements) * sizeof(real);
      row.mb_per_s = seconds > 0 ? bytes / seconds / 1e6 : 0;
      row.messages_per_worker = hub.transport(0).messages_sent() / repeats;
      row.payload_bytes_per_worker = hub.transport(0).payload_bytes_sent() / repeats;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace asr::allreduce

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

#include "asr/dispatch.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <queue>
#include <set>
#include <thread>

#include "asr/ctc.hpp"
#include "asr/metrics.hpp"

namespace asr::dispatch {

void BatchStats::record(int batch_size) {
  if (static_cast<size_t>(batch_size) >= size_histogram.size())
    size_histogram.resize(batch_size + 1, 0);
  ++size_histogram[batch_size];
  ++batches;
  requests += batch_size;
  if (batch_size >= 2) requests_in_ge2 += batch_size;
}

double BatchStats::mean_batch_size() const {
  return batches > 0 ? static_cast<double>(requests) / batches : 0.0;
}

double BatchStats::fraction_of_work_in_ge2() const {
  return requests > 0 ? static_cast<double>(requests_in_ge2) / requests : 0.0;
}

double LatencyStats::median_ms() const { return metrics::percentile(latencies_ms, 50); }
double LatencyStats::p98_ms() const { return metrics::percentile(latencies_ms, 98); }

// ---------------------------------------------------------------------------
// Wall-clock scheduler

struct BatchScheduler::Impl {
  Config cfg;
  BatchFn process;

  std::mutex mu;
  std::condition_variable wake;
  std::deque<std::pair<Request, std::promise<void>>> queue;
  BatchStats stats;
  bool stopping = false;
  std::thread worker;

  void run() {
    for (;;) {
      std::vector<Request> batch;
      std::vector<std::promise<void>> promises;
      {
        std::unique_lock<std::mutex> lock(mu);
        wake.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping && queue.empty()) return;
        // Eager: take whatever is here right now, one chunk per stream.
        std::set<int64_t> in_batch;
        size_t i = 0;
        while (i < queue.size() && static_cast<int>(batch.size()) < cfg.max_batch) {
          if (in_batch.count(queue[i].first.stream_id)) {
            ++i;  // later chunk of a stream already in this batch
            continue;
          }
          in_batch.insert(queue[i].first.stream_id);
          batch.push_back(std::move(queue[i].first));
          promises.push_back(std::move(queue[i].second));
          queue.erase(queue.begin() + i);
        }
        stats.record(static_cast<int>(batch.size()));
      }
      process(batch);
      for (auto& p : promises) p.set_value();
    }
  }
};

BatchScheduler::BatchScheduler(const Config& cfg, BatchFn process) : impl_(new Impl) {
  ASR_REQUIRE(cfg.max_batch >= 1, "scheduler: max_batch must be >= 1");
  impl_->cfg = cfg;
  impl_->process = std::move(process);
  impl_->worker = std::thread([impl = impl_.get()] { impl->run(); });
}

BatchScheduler::~BatchScheduler() { shutdown(); }

void BatchScheduler::shutdown() {
  {
    std::lock_guard<std::mutex> lock(impl_->mu);
    if (impl_->stopping) return;
    impl_->stopping = true;
  }
  impl_->wake.notify_all();
  if (impl_->worker.joinable()) impl_->worker.join();
}

std::future<void> BatchScheduler::submit(Request request) {
  std::future<void> done;
  {
    std::lock_guard<std::mutex> lock(impl_->mu);
    ASR_REQUIRE(!impl_->stopping, "scheduler: already stopped");
    ASR_REQUIRE(impl_->queue.size() < impl_->cfg.queue_limit,
                "scheduler: queue overflow (backpressure)");
    std::promise<void> promise;
    done = promise.get_future();
    impl_->queue.emplace_back(std::move(request), std::move(promise));
  }
  impl_->wake.notify_one();
  return done;
}

BatchStats BatchScheduler::stats() {
  std::lock_guard<std::mutex> lock(impl_->mu);
  return impl_->stats;
}

// ---------------------------------------------------------------------------
// Virtual-time simulation

SimResult simulate_load(const SimConfig& cfg) {
  ASR_REQUIRE(cfg.concurrent_streams >= 1, "simulate_load: need at least one stream");
  ASR_REQUIRE(cfg.mean_interarrival_s > 0, "simulate_load: interarrival must be positive");

  // Pre-generate the full arrival trace so serial and batched runs see
  // identical workloads under the same seed.
  struct Arrival {
    double time;
    int stream;
    long seq;
  };
  std::vector<Arrival> trace;
  long seq = 0;
  for (int s = 0; s < cfg.concurrent_streams; ++s) {
    Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + s);
    double t = 0;
    for (;;) {
      t += -cfg.mean_interarrival_s * std::log(1.0 - rng.uniform());
      if (t > cfg.duration_s) break;
      trace.push_back({t, s, seq++});
    }
  }
  std::sort(trace.begin(), trace.end(), [](const Arrival& a, const Arrival& b) {
    return a.time != b.time ? a.time < b.time : a.seq < b.seq;
  });

  struct Pending {
    double arrival;
    int stream;
    long seq;
  };
  std::deque<Pending> queue;
  SimResult result;
  size_t next_arrival = 0;
  double now = 0;
  double engine_free_at = 0;
  int max_batch = cfg.serial ? 1 : cfg.max_batch;

  while (next_arrival < trace.size() || !queue.empty()) {
    // Admit every arrival that happened by `now`.
    while (next_arrival < trace.size() && trace[next_arrival].time <= now) {
      const auto& a = trace[next_arrival++];
      queue.push_back({a.time, a.stream, a.seq});
    }
    if (queue.empty()) {
      // Idle engine waiting for work: jump to the next arrival.
      now = std::max(now, trace[next_arrival].time);
      continue;
    }
    // Engine idle at `now`: form a batch immediately, one chunk per
    // stream, FIFO otherwise.
    std::vector<Pending> batch;
    std::set<int> streams;
    for (size_t i = 0; i < queue.size() && static_cast<int>(batch.size()) < max_batch;) {
      if (streams.count(queue[i].stream)) {
        ++i;
        continue;
      }
      streams.insert(queue[i].stream);
      batch.push_back(queue[i]);
      queue.erase(queue.begin() + i);
    }
    double compute = cfg.batch_overhead_s + cfg.per_frame_s * cfg.frames_per_chunk;
    double done_at = now + compute;
    for (const auto& req : batch)
      result.latency.latencies_ms.push_back((done_at - req.arrival) * 1000.0);
    result.batches.record(static_cast<int>(batch.size()));
    engine_free_at = done_at;
    // The next batch forms when the engine frees up; new arrivals by then
    // are admitted at the top of the loop.
    now = engine_free_at;
    if (queue.empty() && next_arrival < trace.size() && trace[next_arrival].time > now)
      now = trace[next_arrival].time;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Streaming engine

StreamingEngine::StreamingEngine(nn::Network net, Alphabet alphabet, decoder::DecoderConfig dec_cfg)
    : net_(std::move(net)), alphabet_(std::move(alphabet)), dec_cfg_(dec_cfg) {
  ASR_REQUIRE(net_.streamable(),
              "engine: deployment requires a forward-only model (bidirectional layers cannot stream)");
  ASR_REQUIRE(net_.output_dim() == alphabet_.size() + 1,
              "engine: network output width must be alphabet size + 1");
}

int64_t StreamingEngine::open_stream() {
  int64_t id = next_id_++;
  StreamState state;
  state.net_stream = net_.new_stream();
  state.logits = Matrix(0, net_.output_dim());
  streams_.emplace(id, std::move(state));
  return id;
}

namespace {

void append_rows(Matrix& dst, const Matrix& rows) {
  if (rows.rows() == 0) return;
  Matrix merged(dst.rows() + rows.rows(), rows.cols());
  for (int t = 0; t < dst.rows(); ++t)
    std::copy(dst.row(t), dst.row(t) + dst.cols(), merged.row(t));
  for (int t = 0; t < rows.rows(); ++t)
    std::copy(rows.row(t), rows.row(t) + rows.cols(), merged.row(dst.rows() + t));
  dst = std::move(merged);
}

}  // namespace

void StreamingEngine::push_chunk(int64_t stream_id, const Matrix& frames) {
  auto it = streams_.find(stream_id);
  ASR_REQUIRE(it != streams_.end(), "engine: unknown stream id");
  Matrix out = net_.stream_push(*it->second.net_stream, frames);
  append_rows(it->second.logits, out);
}

std::string StreamingEngine::finish_stream(int64_t stream_id) {
  auto it = streams_.find(stream_id);
  ASR_REQUIRE(it != streams_.end(), "engine: unknown stream id");
  Matrix tail = net_.stream_flush(*it->second.net_stream);
  append_rows(it->second.logits, tail);

  std::string text;
  if (it->second.logits.rows() > 0) {
    Matrix probs = nn::softmax_rows(it->second.logits);
    auto res = decoder::beam_search(probs, alphabet_, nullptr, dec_cfg_);
    text = alphabet_.decode(res.labels);
  }
  streams_.erase(it);
  return text;
}

const Matrix& StreamingEngine::stream_logits(int64_t stream_id) const {
  auto it = streams_.find(stream_id);
  ASR_REQUIRE(it != streams_.end(), "engine: unknown stream id");
  return it->second.logits;
}

// ---------------------------------------------------------------------------
// Socket service

namespace {

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

bool read_exact(int fd, uint8_t* data, size_t bytes) {
  while (bytes > 0) {
    ssize_t n = ::recv(fd, data, bytes, 0);
    if (n <= 0) return false;
    data += n;
    bytes -= static_cast<size_t>(n);
  }
  return true;
}

void write_frame(int fd, FrameKind kind, const void* payload, size_t bytes) {
  ASR_REQUIRE(bytes < 0xFFFFFFFFu - 5, "service: frame payload exceeds the u32 length prefix");
  std::vector<uint8_t> frame(5 + bytes);
  put_u32_le(frame.data(), static_cast<uint32_t>(bytes + 1));
  frame[4] = static_cast<uint8_t>(kind);
  if (bytes > 0) std::memcpy(frame.data() + 5, payload, bytes);
  size_t off = 0;
  while (off < frame.size()) {
    ssize_t n = ::send(fd, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
    ASR_REQUIRE(n > 0, "service: send failed");
    off += static_cast<size_t>(n);
  }
}

bool read_frame(int fd, FrameKind* kind, std::vector<uint8_t>* payload) {
  uint8_t header[4];
  if (!read_exact(fd, header, 4)) return false;
  uint32_t len = get_u32_le(header);
  if (len == 0) return false;
  std::vector<uint8_t> body(len);
  if (!read_exact(fd, body.data(), len)) return false;
  *kind = static_cast<FrameKind>(body[0]);
  payload->assign(body.begin() + 1, body.end());
  return true;
}

}  // namespace

struct InferenceServer::Impl {
  StreamingEngine engine;
  int max_batch;
  int listen_fd = -1;
  int bound_port = 0;
  std::thread accept_thread;
  std::vector<std::thread> connections;
  std::mutex mu;  // engine + scheduler state
  std::unique_ptr<BatchScheduler> scheduler;
  bool running = false;

  explicit Impl(StreamingEngine e, int max_b) : engine(std::move(e)), max_batch(max_b) {}

  void handle_connection(int fd) {
    int64_t stream_id = -1;
    int dim = 0;
    try {
      run_connection(fd, stream_id, dim);
    } catch (const std::runtime_error&) {
      // Protocol violation or backpressure: drop the connection.
    }
    if (stream_id >= 0) {
      std::lock_guard<std::mutex> lock(mu);
      engine.finish_stream(stream_id);  // drop abandoned stream state
    }
    ::close(fd);
  }

  void run_connection(int fd, int64_t& stream_id, int& dim) {
    for (;;) {
      FrameKind kind;
      std::vector<uint8_t> payload;
      if (!read_frame(fd, &kind, &payload)) break;
      if (kind == FrameKind::kStartStream) {
        ASR_REQUIRE(payload.size() == 4, "service: bad START_STREAM payload");
        dim = static_cast<int>(get_u32_le(payload.data()));
        std::lock_guard<std::mutex> lock(mu);
        stream_id = engine.open_stream();
      } else if (kind == FrameKind::kAudioChunk) {
        ASR_REQUIRE(stream_id >= 0 && dim > 0, "service: AUDIO_CHUNK before START_STREAM");
        ASR_REQUIRE(payload.size() % (4 * dim) == 0, "service: chunk is not whole frames");
        int frames = static_cast<int>(payload.size() / (4 * dim));
        Matrix chunk(frames, dim);
        for (int t = 0; t < frames; ++t)
          for (int c = 0; c < dim; ++c) {
            uint32_t u = get_u32_le(payload.data() + 4 * (static_cast<size_t>(t) * dim + c));
            float f;
            std::memcpy(&f, &u, 4);
            chunk(t, c) = static_cast<real>(f);
          }
        Request req;
        req.stream_id = stream_id;
        req.chunk = std::move(chunk);
        scheduler->submit(std::move(req)).wait();
      } else if (kind == FrameKind::kEndStream) {
        ASR_REQUIRE(stream_id >= 0, "service: END_STREAM before START_STREAM");
        std::string text;
        {
          std::lock_guard<std::mutex> lock(mu);
          text = engine.finish_stream(stream_id);
        }
        write_frame(fd, FrameKind::kTranscript, text.data(), text.size());
        stream_id = -1;
      }
    }
  }
};

InferenceServer::InferenceServer(StreamingEngine engine, int port, int max_batch)
    : impl_(new Impl(std::move(engine), max_batch)) {
  impl_->listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
  ASR_REQUIRE(impl_->listen_fd >= 0, "service: cannot create socket");
  int one = 1;
  ::setsockopt(impl_->listen_fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(static_cast<uint16_t>(port));
  ASR_REQUIRE(::bind(impl_->listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0,
              "service: bind failed");
  socklen_t len = sizeof(addr);
  ::getsockname(impl_->listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
  impl_->bound_port = ntohs(addr.sin_port);
}

InferenceServer::~InferenceServer() { stop(); }

int InferenceServer::port() const { return impl_->bound_port; }

void InferenceServer::start() {
  ASR_REQUIRE(!impl_->running, "service: already running");
  BatchScheduler::Config cfg;
  cfg.max_batch = impl_->max_batch;
  impl_->scheduler = std::make_unique<BatchScheduler>(cfg, [impl = impl_.get()](std::vector<Request>& batch) {
    std::lock_guard<std::mutex> lock(impl->mu);
    for (auto& req : batch) impl->engine.push_chunk(req.stream_id, req.chunk);
  });
  ASR_REQUIRE(::listen(impl_->listen_fd, 64) == 0, "service: listen failed");
  impl_->running = true;
  impl_->accept_thread = std::thread([impl = impl_.get()] {
    for (;;) {
      int fd = ::accept(impl->listen_fd, nullptr, nullptr);
      if (fd < 0) return;  // listener closed
      impl->connections.emplace_back([impl, fd] { impl->handle_connection(fd); });
    }
  });
}

void InferenceServer::stop() {
  if (!impl_->running) {
    if (impl_->listen_fd >= 0) {
      ::close(impl_->listen_fd);
      impl_->listen_fd = -1;
    }
    return;
  }
  impl_->running = false;
  ::shutdown(impl_->listen_fd, SHUT_RDWR);
  ::close(impl_->listen_fd);
  impl_->listen_fd = -1;
  if (impl_->accept_thread.joinable()) impl_->accept_thread.join();
  for (auto& t : impl_->connections)
    if (t.joinable()) t.join();
  impl_->scheduler->shutdown();
}

BatchStats InferenceServer::stats() { return impl_->scheduler->stats(); }

std::string transcribe_over_socket(const std::string& host, int port, const Matrix& features,
                                   int chunk_frames) {
  ASR_REQUIRE(chunk_frames >= 1, "client: chunk_frames must be >= 1");
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  ASR_REQUIRE(fd >= 0, "client: cannot create socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  addr.sin_addr.s_addr = inet_addr(host == "localhost" ? "127.0.0.1" : host.c_str());
  ASR_REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0,
              "client: connect failed");

  uint8_t dim_payload[4];
  put_u32_le(dim_payload, static_cast<uint32_t>(features.cols()));
  write_frame(fd, FrameKind::kStartStream, dim_payload, 4);

  for (int begin = 0; begin < features.rows(); begin += chunk_frames) {
    int n = std::min(chunk_frames, features.rows() - begin);
    std::vector<uint8_t> payload(static_cast<size_t>(n) * features.cols() * 4);
    for (int t = 0; t < n; ++t)
      for (int c = 0; c < features.cols(); ++c) {
        float f = static_cast<float>(features(begin + t, c));
        uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32_le(payload.data() + 4 * (static_cast<size_t>(t) * features.cols() + c), u);
      }
    write_frame(fd, FrameKind::kAudioChunk, payload.data(), payload.size());
  }
  write_frame(fd, FrameKind::kEndStream, nullptr, 0);

  FrameKind kind;
  std::vector<uint8_t> payload;
  ASR_REQUIRE(read_frame(fd, &kind, &payload), "client: connection closed before transcript");
  ASR_REQUIRE(kind == FrameKind::kTranscript, "client: unexpected frame kind");
  ::close(fd);
  return std::string(payload.begin(), payload.end());
}

}  // namespace asr::dispatch

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

#ifndef ASR_DISPATCH_HPP
#define ASR_DISPATCH_HPP

#include <functional>
#include <future>
#include <map>
#include <string>
#include <vector>

#include "asr/decoder.hpp"
#include "asr/features.hpp"
#include "asr/network.hpp"

namespace asr::dispatch {

// One unit of inference work: a chunk of feature frames for a stream.
struct Request {
  int64_t stream_id = 0;
  Matrix chunk;
  bool end_of_stream = false;
  double arrival_time = 0;
};

struct BatchStats {
  std::vector<long> size_histogram;  // index = batch size
  long batches = 0;
  long requests = 0;
  long requests_in_ge2 = 0;  // requests processed in batches of size >= 2

  void record(int batch_size);
  double mean_batch_size() const;
  double fraction_of_work_in_ge2() const;
};

struct LatencyStats {
  std::vector<double> latencies_ms;  // completed requests only
  double median_ms() const;
  double p98_ms() const;
};

// ---------------------------------------------------------------------------
// Eager batching scheduler (wall-clock mode)

// Forms a batch from whatever is queued the moment the engine goes idle,
// never waiting for more work, with at most one chunk per stream per batch
// so a stream's chunks stay ordered.
class BatchScheduler {
 public:
  struct Config {
    int max_batch = 32;
    size_t queue_limit = 4096;
  };
  // Runs on the scheduler thread with the formed batch.
  using BatchFn = std::function<void(std::vector<Request>&)>;

  BatchScheduler(const Config& cfg, BatchFn process);
  ~BatchScheduler();

  // Completion handle; resolves after the request's batch finishes.
  // Throws when the queue is at its configured bound (backpressure).
  std::future<void> submit(Request request);

  BatchStats stats();
  void shutdown();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Virtual-time simulation (deterministic)

struct SimConfig {
  int concurrent_streams = 10;
  double duration_s = 30;        // admission window, virtual seconds
  double mean_interarrival_s = 0.030;  // per stream, exponential
  int frames_per_chunk = 20;
  double batch_overhead_s = 0.008;
  double per_frame_s = 0.0006;   // per time-step of the longest chunk in the batch
  int max_batch = 32;
  bool serial = false;           // process strictly one request per batch
  uint64_t seed = 1;
};

struct SimResult {
  LatencyStats latency;
  BatchStats batches;
};

// Event-driven closed simulation of Batch Dispatch under open-loop Poisson
// arrivals per stream. The compute cost model is
//   batch_overhead_s + per_frame_s * max frames in the batch.
// Identical seeds give identical arrival traces, so serial and batched
// runs pair up. The queue drains fully after admission stops; percentiles
// cover completed requests only (which is all of them).
SimResult simulate_load(const SimConfig& cfg);

// ---------------------------------------------------------------------------
// Streaming inference engine over a forward-only network

class StreamingEngine {
 public:
  StreamingEngine(nn::Network net, Alphabet alphabet, decoder::DecoderConfig dec_cfg);

  int64_t open_stream();
  // Pushes one chunk of feature frames through the per-stream state;
  // emitted logit frames accumulate inside the engine.
  void push_chunk(int64_t stream_id, const Matrix& frames);
  // Flushes, decodes and closes the stream.
  std::string finish_stream(int64_t stream_id);

  // Full accumulated frame log-probabilities (for equivalence tests).
  const Matrix& stream_logits(int64_t stream_id) const;

  nn::Network& network() { return net_; }
  const Alphabet& alphabet() const { return alphabet_; }

 private:
  struct StreamState {
    std::unique_ptr<nn::Network::Stream> net_stream;
    Matrix logits;  // rows appended as they are emitted
  };

  nn::Network net_;
  Alphabet alphabet_;
  decoder::DecoderConfig dec_cfg_;
  int64_t next_id_ = 1;
  std::map<int64_t, StreamState> streams_;
};

// ---------------------------------------------------------------------------
// Socket service
//
// Frames: [u32 length][u8 kind][payload], little-endian.
// Kinds: 1 START_STREAM (payload: u32 feature dim),
//        2 AUDIO_CHUNK  (payload: float32 feature frames, row-major),
//        3 END_STREAM   (empty),
//        4 TRANSCRIPT   (payload: UTF-8, server to client).
enum class FrameKind : uint8_t {
  kStartStream = 1,
  kAudioChunk = 2,
  kEndStream = 3,
  kTranscript = 4,
};

class InferenceServer {
 public:
  // Port 0 binds an ephemeral port; port() reports the actual one.
  InferenceServer(StreamingEngine engine, int port, int max_batch = 32);
  ~InferenceServer();

  void start();
  void stop();
  int port() const;
  BatchStats stats();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Blocking client helper: streams the feature matrix in chunks and returns
// the transcript.
std::string transcribe_over_socket(const std::string& host, int port, const Matrix& features,
                                   int chunk_frames);

}  // namespace asr::dispatch

#endif  // ASR_DISPATCH_HPP

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

#ifndef ASR_NETWORK_HPP
#define ASR_NETWORK_HPP

#include <memory>
#include <string>
#include <vector>

#include "asr/nn.hpp"

namespace asr::nn {

// Flat, ordered view of all trainable parameters (or their gradients):
// layer order, then each layer's declaration order. This is the unit
// every all-reduce and optimizer step operates on.
using ParamVector = std::vector<real>;

struct NetworkConfig {
  int input_bins = 0;     // feature bins entering the first layer
  int alphabet_size = 0;  // output symbols, excluding the blank
  Direction direction = Direction::kBidirectional;
  RnnKind rnn_kind = RnnKind::kSimple;
  bool batchnorm = true;
  std::vector<ConvSpec> convs;  // in_channels / in_freq are derived while building
  int rnn_layers = 1;
  int hidden = 64;
  int fc_layers = 0;       // extra hidden FC layers between recurrence and output
  int row_conv_tau = -1;   // >= 0 inserts a row convolution (forward-only nets)
  uint64_t alphabet_hash = 0;
};

class Network {
 public:
  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  Batch forward(const Batch& in, bool train);
  // Backpropagates d(loss)/d(logits); parameter gradients accumulate into
  // the layers' gradient buffers.
  Batch backward(const Batch& dlogits);

  std::vector<ParamRef> params();
  size_t param_count();

  int input_dim() const { return layers.empty() ? 0 : layers.front()->input_dim(); }
  int output_dim() const { return layers.empty() ? 0 : layers.back()->output_dim(); }
  bool streamable() const;
  // Output frames per input frame quotient and worst-case future
  // dependence of one output frame, in input frames.
  int total_stride() const;
  int lookahead_frames() const;

  // Per-stream state for incremental forward-only evaluation.
  struct Stream {
    std::vector<std::unique_ptr<LayerStream>> states;
  };
  std::unique_ptr<Stream> new_stream() const;
  Matrix stream_push(Stream& stream, const Matrix& frames) const;
  Matrix stream_flush(Stream& stream) const;

  std::vector<std::unique_ptr<Layer>> layers;
  Direction direction = Direction::kBidirectional;
  uint64_t alphabet_hash = 0;
};

Network build_network(const NetworkConfig& cfg);
long count_params(const NetworkConfig& cfg);

// Uniform width for rnn/fc layers hitting a total parameter budget; the
// returned width lands within 1% of `target_params` for budgets that are
// large relative to one layer's quadratic step.
int size_hidden_for_budget(NetworkConfig cfg, long target_params);

// uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)) for weights, one
// for BatchNorm scales, zero for shifts and biases.
void init_params(Network& net, uint64_t seed);

void zero_grads(Network& net);
ParamVector get_params(Network& net);
void set_params(Network& net, const ParamVector& flat);
ParamVector get_grads(Network& net);

// Checkpoint: magic "DS2C", version u32, little-endian throughout;
// alphabet hash; per-layer type tag, shape header and raw float64
// payloads, plus BatchNorm running statistics.
void save_checkpoint(Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace asr::nn

#endif  // ASR_NETWORK_HPP

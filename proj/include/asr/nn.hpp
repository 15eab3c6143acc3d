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

#ifndef ASR_NN_HPP
#define ASR_NN_HPP

#include <memory>
#include <string>
#include <vector>

#include "asr/common.hpp"
#include "asr/features.hpp"

namespace asr::nn {

// Clipped rectified linear unit, saturating at 20.
inline real clipped_relu(real x) { return std::min(std::max(x, real(0)), real(20)); }
inline real clipped_relu_grad(real x) { return x > 0 && x < 20 ? real(1) : real(0); }

// Row-stable softmax; rows sum to one.
Matrix softmax_rows(const Matrix& logits);

// A minibatch of variable-length activation sequences, one T_i x D matrix
// per utterance.
using Batch = std::vector<Matrix>;

// Named view of one parameter matrix and its gradient buffer. The
// flattening order of a network is the layer order, then each layer's
// declaration order, which makes ParamVector round trips exact.
struct ParamRef {
  std::string name;
  Matrix* value;
  Matrix* grad;
};

// Sequence-wise batch normalization: statistics per hidden unit over every
// item of the minibatch and every time-step. `width` > 1 groups that many
// consecutive columns per unit (convolutional feature maps normalize per
// channel over time and frequency). Inference uses the stored running
// averages and fails if they were never primed.
class SeqBatchNorm {
 public:
  SeqBatchNorm(int units, int width = 1);

  Batch forward(const Batch& pre, bool train);
  // Returns d(pre); accumulates gamma/beta gradients.
  Batch backward(const Batch& dout);

  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  int units() const { return units_; }
  real gamma(int u) const { return gamma_(0, u); }
  real beta(int u) const { return beta_(0, u); }
  const NormalizerState& running() const { return running_; }
  NormalizerState& running() { return running_; }
  // Inference-mode transform of one value of unit u.
  real apply_running(real x, int u) const {
    return gamma_(0, u) * (x - running_.mean[u]) / std::sqrt(running_.var[u] + eps) + beta_(0, u);
  }

  real momentum = 0.95;
  real eps = 1e-5;

 private:
  int units_;
  int width_;
  Matrix gamma_, beta_;    // 1 x units
  Matrix dgamma_, dbeta_;  // 1 x units
  NormalizerState running_;

  // training cache
  Batch x_hat_;
  std::vector<real> inv_std_;
  bool train_cache_valid_ = false;
  bool infer_cache_valid_ = false;
};

enum class LayerKind : uint32_t {
  kConv2d = 1,
  kRecurrent = 2,
  kRowConv = 3,
  kFullyConnected = 4,
};

enum class RnnKind : uint32_t { kSimple = 0, kGru = 1 };
enum class Direction : uint32_t { kBidirectional = 0, kForwardOnly = 1 };

// Per-stream incremental state. Concrete layers define what they keep.
struct LayerStream {
  virtual ~LayerStream() = default;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual int input_dim() const = 0;
  virtual int output_dim() const = 0;

  // Train mode caches activations for backward; inference mode does not.
  virtual Batch forward(const Batch& in, bool train) = 0;
  // Consumes the cache from the last train-mode forward and accumulates
  // parameter gradients. Throws if no cached forward is pending.
  virtual Batch backward(const Batch& dout) = 0;

  virtual void collect(const std::string& prefix, std::vector<ParamRef>& out) = 0;

  // BatchNorm instances owned by the layer (running statistics live
  // there), in declaration order. Empty when the layer has none.
  virtual std::vector<SeqBatchNorm*> batchnorms() { return {}; }

  // Streaming evaluation (inference). Default: not streamable.
  virtual bool streamable() const { return false; }
  virtual std::unique_ptr<LayerStream> make_stream() const;
  virtual Matrix stream_push(LayerStream& state, const Matrix& frames) const;
  virtual Matrix stream_flush(LayerStream& state) const;

  // Output frames per `frames` input frames (striding), and how many
  // future input frames one output frame may depend on.
  virtual int time_stride() const { return 1; }
  virtual int lookahead() const { return 0; }

  // Layer-specific config words for the checkpoint header.
  virtual std::vector<uint32_t> config_words() const = 0;
};

// 2D convolution over (time, frequency) with "same" padding before
// striding, clipped-ReLU nonlinearity and optional per-channel sequence
// BatchNorm. Activations are laid out channel-major: column c*F + f.
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int filter_freq = 1;   // filter extent across frequency
  int filter_time = 1;   // filter extent across time
  int stride_freq = 1;
  int stride_time = 1;
  int in_freq = 0;       // frequency bins per input channel

  int out_freq() const { return (in_freq + stride_freq - 1) / stride_freq; }
  // Symmetric zero padding, extra element on the trailing side when odd.
  int pad_freq_total() const { return std::max(0, (out_freq() - 1) * stride_freq + filter_freq - in_freq); }
  int pad_time_for(int frames_in, int frames_out) const {
    return std::max(0, (frames_out - 1) * stride_time + filter_time - frames_in);
  }
};

std::unique_ptr<Layer> make_conv2d(const ConvSpec& spec, bool batchnorm);

// Simple or GRU recurrence; bidirectional output is the sum of the two
// directional passes. Input-hidden weights (and their optional BatchNorm)
// are shared between directions.
std::unique_ptr<Layer> make_recurrent(RnnKind kind, Direction direction, int in_dim, int hidden,
                                      bool batchnorm);

// Linear per-unit lookahead over tau future frames (tau+1 taps including
// the current frame); frames past the sequence end count as zero.
std::unique_ptr<Layer> make_row_conv(int dim, int tau);

// Fully connected with optional clipped-ReLU and BatchNorm; the output
// layer of a network uses relu=false to expose raw logits.
std::unique_ptr<Layer> make_fully_connected(int in_dim, int out_dim, bool relu, bool batchnorm);

}  // namespace asr::nn

#endif  // ASR_NN_HPP

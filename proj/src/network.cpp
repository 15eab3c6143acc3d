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

#include "asr/network.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>

namespace asr::nn {

Batch Network::forward(const Batch& in, bool train) {
  Batch cur = in;
  for (auto& layer : layers) cur = layer->forward(cur, train);
  return cur;
}

Batch Network::backward(const Batch& dlogits) {
  Batch cur = dlogits;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

std::vector<ParamRef> Network::params() {
  std::vector<ParamRef> refs;
  for (size_t i = 0; i < layers.size(); ++i)
    layers[i]->collect("layer" + std::to_string(i), refs);
  return refs;
}

size_t Network::param_count() {
  size_t n = 0;
  for (const auto& ref : params()) n += ref.value->size();
  return n;
}

bool Network::streamable() const {
  for (const auto& layer : layers)
    if (!layer->streamable()) return false;
  return true;
}

int Network::total_stride() const {
  int s = 1;
  for (const auto& layer : layers) s *= layer->time_stride();
  return s;
}

int Network::lookahead_frames() const {
  // A layer's lookahead is in its own input frames; scale by the strides
  // accumulated below it.
  int total = 0, scale = 1;
  for (const auto& layer : layers) {
    total += layer->lookahead() * scale;
    scale *= layer->time_stride();
  }
  return total;
}

std::unique_ptr<Network::Stream> Network::new_stream() const {
  ASR_REQUIRE(streamable(), "network: streaming requires a forward-only model");
  auto stream = std::make_unique<Stream>();
  for (const auto& layer : layers) stream->states.push_back(layer->make_stream());
  return stream;
}

Matrix Network::stream_push(Stream& stream, const Matrix& frames) const {
  Matrix cur = frames;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (cur.rows() == 0 && i > 0) {
      // No newly computable frames at this depth yet.
      cur = Matrix(0, layers[i]->input_dim());
    }
    cur = layers[i]->stream_push(*stream.states[i], cur);
  }
  return cur;
}

Matrix Network::stream_flush(Stream& stream) const {
  Matrix carry;  // rows still to be pushed into the next layer
  for (size_t i = 0; i < layers.size(); ++i) {
    Matrix pushed;
    if (carry.rows() > 0) pushed = layers[i]->stream_push(*stream.states[i], carry);
    Matrix flushed = layers[i]->stream_flush(*stream.states[i]);
    int rows = pushed.rows() + flushed.rows();
    carry = Matrix(rows, layers[i]->output_dim());
    for (int t = 0; t < pushed.rows(); ++t)
      std::copy(pushed.row(t), pushed.row(t) + pushed.cols(), carry.row(t));
    for (int t = 0; t < flushed.rows(); ++t)
      std::copy(flushed.row(t), flushed.row(t) + flushed.cols(), carry.row(pushed.rows() + t));
  }
  return carry;
}

Network build_network(const NetworkConfig& cfg) {
  ASR_REQUIRE(cfg.input_bins >= 1, "build_network: input_bins must be >= 1");
  ASR_REQUIRE(cfg.alphabet_size >= 1, "build_network: alphabet_size must be >= 1");
  Network net;
  net.direction = cfg.direction;
  net.alphabet_hash = cfg.alphabet_hash;

  int channels = 1, freq = cfg.input_bins;
  for (ConvSpec spec : cfg.convs) {
    spec.in_channels = channels;
    spec.in_freq = freq;
    net.layers.push_back(make_conv2d(spec, cfg.batchnorm));
    channels = spec.out_channels;
    freq = spec.out_freq();
  }
  int dim = channels * freq;
  for (int i = 0; i < cfg.rnn_layers; ++i) {
    net.layers.push_back(make_recurrent(cfg.rnn_kind, cfg.direction, dim, cfg.hidden, cfg.batchnorm));
    dim = cfg.hidden;
  }
  if (cfg.row_conv_tau >= 0) {
    ASR_REQUIRE(cfg.direction == Direction::kForwardOnly,
                "build_network: row convolution belongs to forward-only models");
    net.layers.push_back(make_row_conv(dim, cfg.row_conv_tau));
  }
  for (int i = 0; i < cfg.fc_layers; ++i) {
    net.layers.push_back(make_fully_connected(dim, cfg.hidden, /*relu=*/true, cfg.batchnorm));
    dim = cfg.hidden;
  }
  net.layers.push_back(make_fully_connected(dim, cfg.alphabet_size + 1, /*relu=*/false, /*batchnorm=*/false));
  return net;
}

long count_params(const NetworkConfig& cfg) {
  Network net = build_network(cfg);
  return static_cast<long>(net.param_count());
}

int size_hidden_for_budget(NetworkConfig cfg, long target_params) {
  ASR_REQUIRE(target_params > 0, "size_hidden_for_budget: target must be positive");
  auto params_at = [&](int h) {
    cfg.hidden = h;
    return count_params(cfg);
  };
  int lo = 1, hi = 2;
  while (params_at(hi) < target_params) {
    lo = hi;
    hi *= 2;
    ASR_REQUIRE(hi < (1 << 20), "size_hidden_for_budget: target out of reach");
  }
  while (lo + 1 < hi) {
    int mid = lo + (hi - lo) / 2;
    (params_at(mid) < target_params ? lo : hi) = mid;
  }
  long below = std::labs(params_at(lo) - target_params);
  long above = std::labs(params_at(hi) - target_params);
  return below <= above ? lo : hi;
}

void init_params(Network& net, uint64_t seed) {
  Rng rng(seed);
  for (auto& ref : net.params()) {
    Matrix& m = *ref.value;
    std::string leaf = ref.name.substr(ref.name.rfind('.') + 1);
    bool is_gamma = leaf == "gamma";
    bool is_shift = leaf == "beta" || leaf[0] == 'b';
    if (is_gamma) {
      m.fill(1.0);
    } else if (is_shift) {
      m.fill(0.0);
    } else {
      real r = std::sqrt(6.0 / (m.rows() + m.cols()));
      for (size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<real>(rng.uniform(-r, r));
    }
    ref.grad->fill(0.0);
  }
}

void zero_grads(Network& net) {
  for (auto& ref : net.params()) ref.grad->fill(0.0);
}

ParamVector get_params(Network& net) {
  ParamVector flat;
  for (auto& ref : net.params())
    flat.insert(flat.end(), ref.value->data(), ref.value->data() + ref.value->size());
  return flat;
}

void set_params(Network& net, const ParamVector& flat) {
  size_t off = 0;
  for (auto& ref : net.params()) {
    ASR_REQUIRE(off + ref.value->size() <= flat.size(), "set_params: vector too short");
    std::copy(flat.begin() + off, flat.begin() + off + ref.value->size(), ref.value->data());
    off += ref.value->size();
  }
  ASR_REQUIRE(off == flat.size(), "set_params: vector length mismatch");
}

ParamVector get_grads(Network& net) {
  ParamVector flat;
  for (auto& ref : net.params())
    flat.insert(flat.end(), ref.grad->data(), ref.grad->data() + ref.grad->size());
  return flat;
}

namespace {

constexpr char kMagic[4] = {'D', 'S', '2', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, static_cast<uint32_t>(v));
  put_u32(os, static_cast<uint32_t>(v >> 32));
}

void put_f64(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64(os, u);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is) {
  uint64_t lo = get_u32(is);
  uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

double get_f64(std::istream& is) {
  uint64_t u = get_u64(is);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

std::unique_ptr<Layer> layer_from_header(LayerKind kind, const std::vector<uint32_t>& cfg) {
  switch (kind) {
    case LayerKind::kConv2d: {
      ASR_REQUIRE(cfg.size() == 8, "checkpoint: bad conv header");
      ConvSpec spec;
      spec.in_channels = static_cast<int>(cfg[0]);
      spec.out_channels = static_cast<int>(cfg[1]);
      spec.filter_freq = static_cast<int>(cfg[2]);
      spec.filter_time = static_cast<int>(cfg[3]);
      spec.stride_freq = static_cast<int>(cfg[4]);
      spec.stride_time = static_cast<int>(cfg[5]);
      spec.in_freq = static_cast<int>(cfg[6]);
      return make_conv2d(spec, cfg[7] != 0);
    }
    case LayerKind::kRecurrent:
      ASR_REQUIRE(cfg.size() == 5, "checkpoint: bad recurrent header");
      return make_recurrent(static_cast<RnnKind>(cfg[0]), static_cast<Direction>(cfg[1]),
                            static_cast<int>(cfg[2]), static_cast<int>(cfg[3]), cfg[4] != 0);
    case LayerKind::kRowConv:
      ASR_REQUIRE(cfg.size() == 2, "checkpoint: bad row conv header");
      return make_row_conv(static_cast<int>(cfg[0]), static_cast<int>(cfg[1]));
    case LayerKind::kFullyConnected:
      ASR_REQUIRE(cfg.size() == 4, "checkpoint: bad fc header");
      return make_fully_connected(static_cast<int>(cfg[0]), static_cast<int>(cfg[1]), cfg[2] != 0,
                                  cfg[3] != 0);
  }
  fail("checkpoint: unknown layer kind");
}

}  // namespace

void save_checkpoint(Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  ASR_REQUIRE(os.good(), "save_checkpoint: cannot open " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u64(os, net.alphabet_hash);
  put_u32(os, static_cast<uint32_t>(net.direction));
  put_u32(os, static_cast<uint32_t>(net.layers.size()));
  for (size_t i = 0; i < net.layers.size(); ++i) {
    Layer& layer = *net.layers[i];
    put_u32(os, static_cast<uint32_t>(layer.kind()));
    auto cfg = layer.config_words();
    put_u32(os, static_cast<uint32_t>(cfg.size()));
    for (uint32_t w : cfg) put_u32(os, w);

    std::vector<ParamRef> refs;
    layer.collect("layer" + std::to_string(i), refs);
    put_u32(os, static_cast<uint32_t>(refs.size()));
    for (const auto& ref : refs) {
      put_string(os, ref.name);
      put_u32(os, static_cast<uint32_t>(ref.value->rows()));
      put_u32(os, static_cast<uint32_t>(ref.value->cols()));
      for (size_t j = 0; j < ref.value->size(); ++j) put_f64(os, ref.value->data()[j]);
    }

    auto bns = layer.batchnorms();
    put_u32(os, static_cast<uint32_t>(bns.size()));
    for (SeqBatchNorm* bn : bns) {
      const NormalizerState& run = bn->running();
      put_u64(os, static_cast<uint64_t>(run.count));
      put_u32(os, static_cast<uint32_t>(run.mean.size()));
      for (real v : run.mean) put_f64(os, v);
      for (real v : run.var) put_f64(os, v);
    }
  }
  ASR_REQUIRE(os.good(), "save_checkpoint: write failed for " + path);
}

Network load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  ASR_REQUIRE(is.good(), "load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  ASR_REQUIRE(std::memcmp(magic, kMagic, 4) == 0, "load_checkpoint: bad magic in " + path);
  uint32_t version = get_u32(is);
  ASR_REQUIRE(version == kVersion, "load_checkpoint: unsupported version");

  Network net;
  net.alphabet_hash = get_u64(is);
  net.direction = static_cast<Direction>(get_u32(is));
  uint32_t layer_count = get_u32(is);
  for (uint32_t i = 0; i < layer_count; ++i) {
    LayerKind kind = static_cast<LayerKind>(get_u32(is));
    uint32_t n_cfg = get_u32(is);
    std::vector<uint32_t> cfg(n_cfg);
    for (auto& w : cfg) w = get_u32(is);
    auto layer = layer_from_header(kind, cfg);

    std::vector<ParamRef> refs;
    layer->collect("layer" + std::to_string(i), refs);
    uint32_t n_params = get_u32(is);
    ASR_REQUIRE(n_params == refs.size(), "load_checkpoint: parameter count mismatch");
    for (auto& ref : refs) {
      std::string name = get_string(is);
      ASR_REQUIRE(name == ref.name, "load_checkpoint: parameter order mismatch at " + name);
      uint32_t rows = get_u32(is), cols = get_u32(is);
      ASR_REQUIRE(rows == static_cast<uint32_t>(ref.value->rows()) &&
                      cols == static_cast<uint32_t>(ref.value->cols()),
                  "load_checkpoint: shape mismatch at " + name);
      for (size_t j = 0; j < ref.value->size(); ++j)
        ref.value->data()[j] = static_cast<real>(get_f64(is));
    }

    auto bns = layer->batchnorms();
    uint32_t n_bns = get_u32(is);
    ASR_REQUIRE(n_bns == bns.size(), "load_checkpoint: BatchNorm count mismatch");
    for (SeqBatchNorm* bn : bns) {
      NormalizerState& run = bn->running();
      run.count = static_cast<long>(get_u64(is));
      uint32_t units = get_u32(is);
      ASR_REQUIRE(units == run.mean.size(), "load_checkpoint: BatchNorm width mismatch");
      for (auto& v : run.mean) v = static_cast<real>(get_f64(is));
      for (auto& v : run.var) v = static_cast<real>(get_f64(is));
    }
    net.layers.push_back(std::move(layer));
  }
  ASR_REQUIRE(is.good(), "load_checkpoint: truncated file " + path);
  return net;
}

}  // namespace asr::nn

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

#include "asr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace asr::nn {

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (int t = 0; t < logits.rows(); ++t) {
    const real* in = logits.row(t);
    real* o = out.row(t);
    real mx = in[0];
    for (int k = 1; k < logits.cols(); ++k) mx = std::max(mx, in[k]);
    real sum = 0;
    for (int k = 0; k < logits.cols(); ++k) {
      o[k] = std::exp(in[k] - mx);
      sum += o[k];
    }
    for (int k = 0; k < logits.cols(); ++k) o[k] /= sum;
  }
  return out;
}

SeqBatchNorm::SeqBatchNorm(int units, int width)
    : units_(units), width_(width), gamma_(1, units, 1.0), beta_(1, units, 0.0),
      dgamma_(1, units, 0.0), dbeta_(1, units, 0.0) {
  running_.mean.assign(units, 0);
  running_.var.assign(units, 0);
}

Batch SeqBatchNorm::forward(const Batch& pre, bool train) {
  long total_rows = 0;
  for (const auto& m : pre) {
    ASR_REQUIRE(m.cols() == units_ * width_, "SeqBatchNorm: unit count mismatch");
    total_rows += m.rows();
  }

  Batch out(pre.size());
  if (!train) {
    ASR_REQUIRE(running_.primed(), "SeqBatchNorm: inference requires primed running statistics");
    for (size_t b = 0; b < pre.size(); ++b) {
      out[b] = Matrix(pre[b].rows(), pre[b].cols());
      for (int t = 0; t < pre[b].rows(); ++t)
        for (int c = 0; c < pre[b].cols(); ++c) out[b](t, c) = apply_running(pre[b](t, c), c / width_);
    }
    train_cache_valid_ = false;
    return out;
  }

  ASR_REQUIRE(total_rows * width_ >= 2, "SeqBatchNorm: train mode needs at least two elements");
  // Statistics per unit over every item in the minibatch over the length
  // of every sequence (and across the map width for convolutions).
  std::vector<double> mean(units_, 0.0), var(units_, 0.0);
  double denom = static_cast<double>(total_rows) * width_;
  for (const auto& m : pre)
    for (int t = 0; t < m.rows(); ++t)
      for (int c = 0; c < m.cols(); ++c) mean[c / width_] += m(t, c);
  for (int u = 0; u < units_; ++u) mean[u] /= denom;
  for (const auto& m : pre)
    for (int t = 0; t < m.rows(); ++t)
      for (int c = 0; c < m.cols(); ++c) {
        double d = m(t, c) - mean[c / width_];
        var[c / width_] += d * d;
      }
  for (int u = 0; u < units_; ++u) var[u] /= denom;

  inv_std_.resize(units_);
  for (int u = 0; u < units_; ++u) inv_std_[u] = 1.0 / std::sqrt(var[u] + eps);

  x_hat_.assign(pre.size(), Matrix());
  for (size_t b = 0; b < pre.size(); ++b) {
    x_hat_[b] = Matrix(pre[b].rows(), pre[b].cols());
    out[b] = Matrix(pre[b].rows(), pre[b].cols());
    for (int t = 0; t < pre[b].rows(); ++t)
      for (int c = 0; c < pre[b].cols(); ++c) {
        int u = c / width_;
        real xh = (pre[b](t, c) - mean[u]) * inv_std_[u];
        x_hat_[b](t, c) = xh;
        out[b](t, c) = gamma_(0, u) * xh + beta_(0, u);
      }
  }

  if (!running_.primed()) {
    for (int u = 0; u < units_; ++u) {
      running_.mean[u] = static_cast<real>(mean[u]);
      running_.var[u] = static_cast<real>(var[u]);
    }
  } else {
    for (int u = 0; u < units_; ++u) {
      running_.mean[u] = momentum * running_.mean[u] + (1 - momentum) * static_cast<real>(mean[u]);
      running_.var[u] = momentum * running_.var[u] + (1 - momentum) * static_cast<real>(var[u]);
    }
  }
  running_.count += total_rows;
  train_cache_valid_ = true;
  return out;
}

Batch SeqBatchNorm::backward(const Batch& dout) {
  ASR_REQUIRE(train_cache_valid_, "SeqBatchNorm: backward without a cached train-mode forward");
  ASR_REQUIRE(dout.size() == x_hat_.size(), "SeqBatchNorm: batch size mismatch");

  long total_rows = 0;
  for (const auto& m : dout) total_rows += m.rows();
  double denom = static_cast<double>(total_rows) * width_;

  std::vector<double> sum_dy(units_, 0.0), sum_dyxh(units_, 0.0);
  for (size_t b = 0; b < dout.size(); ++b)
    for (int t = 0; t < dout[b].rows(); ++t)
      for (int c = 0; c < dout[b].cols(); ++c) {
        int u = c / width_;
        sum_dy[u] += dout[b](t, c);
        sum_dyxh[u] += dout[b](t, c) * x_hat_[b](t, c);
      }

  for (int u = 0; u < units_; ++u) {
    dgamma_(0, u) += static_cast<real>(sum_dyxh[u]);
    dbeta_(0, u) += static_cast<real>(sum_dy[u]);
  }

  Batch dx(dout.size());
  for (size_t b = 0; b < dout.size(); ++b) {
    dx[b] = Matrix(dout[b].rows(), dout[b].cols());
    for (int t = 0; t < dout[b].rows(); ++t)
      for (int c = 0; c < dout[b].cols(); ++c) {
        int u = c / width_;
        double term = dout[b](t, c) - sum_dy[u] / denom - x_hat_[b](t, c) * sum_dyxh[u] / denom;
        dx[b](t, c) = static_cast<real>(gamma_(0, u) * inv_std_[u] * term);
      }
  }
  train_cache_valid_ = false;
  return dx;
}

void SeqBatchNorm::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", &gamma_, &dgamma_});
  out.push_back({prefix + ".beta", &beta_, &dbeta_});
}

std::unique_ptr<LayerStream> Layer::make_stream() const {
  fail("layer is not streamable (bidirectional recurrences require the whole utterance)");
}

Matrix Layer::stream_push(LayerStream&, const Matrix&) const { fail("layer is not streamable"); }

Matrix Layer::stream_flush(LayerStream&) const { fail("layer is not streamable"); }

namespace {

Matrix rows_to_matrix(const std::vector<std::vector<real>>& rows, int cols) {
  Matrix m(static_cast<int>(rows.size()), cols);
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), m.row(static_cast<int>(i)));
  return m;
}

// ---------------------------------------------------------------------------
// 2D convolution

struct ConvStream : LayerStream {
  std::deque<std::vector<real>> pending;
  long received = 0;       // absolute input rows seen
  long first_pending = 0;  // absolute index of pending.front()
  long emitted = 0;        // output rows produced
};

class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(const ConvSpec& spec, bool batchnorm)
      : spec_(spec),
        bn_(batchnorm ? std::make_unique<SeqBatchNorm>(spec.out_channels, spec.out_freq()) : nullptr),
        w_(spec.out_channels, spec.in_channels * spec.filter_time * spec.filter_freq),
        dw_(w_.rows(), w_.cols()),
        b_(1, spec.out_channels),
        db_(1, spec.out_channels) {
    ASR_REQUIRE(spec.stride_time >= 1 && spec.stride_freq >= 1, "conv: strides must be >= 1");
    ASR_REQUIRE(spec.in_freq >= 1 && spec.filter_time >= 1 && spec.filter_freq >= 1,
                "conv: degenerate geometry");
  }

  LayerKind kind() const override { return LayerKind::kConv2d; }
  int input_dim() const override { return spec_.in_channels * spec_.in_freq; }
  int output_dim() const override { return spec_.out_channels * spec_.out_freq(); }
  int time_stride() const override { return spec_.stride_time; }
  int lookahead() const override { return spec_.filter_time - 1 - pad_time_top(); }
  bool streamable() const override { return true; }

  // Leading time padding is a constant (not a function of the sequence
  // length) so that batch and streaming evaluation agree for any stride.
  // The trailing side absorbs the remainder.
  int pad_time_top() const { return std::max(0, (spec_.filter_time - spec_.stride_time) / 2); }
  int pad_freq_left() const { return spec_.pad_freq_total() / 2; }
  int out_frames(int in_frames) const { return (in_frames + spec_.stride_time - 1) / spec_.stride_time; }

  Batch forward(const Batch& in, bool train) override {
    Batch pre(in.size());
    if (train) x_cache_ = in;
    for (size_t bi = 0; bi < in.size(); ++bi) {
      ASR_REQUIRE(in[bi].cols() == input_dim(),
                  "conv: input dim mismatch (got " + std::to_string(in[bi].cols()) + ", want " +
                      std::to_string(input_dim()) + ")");
      int frames_out = out_frames(in[bi].rows());
      pre[bi] = Matrix(frames_out, output_dim());
      for (int ot = 0; ot < frames_out; ++ot)
        conv_row([&](long it) { return it >= 0 && it < in[bi].rows() ? in[bi].row(static_cast<int>(it)) : nullptr; },
                 ot, pre[bi].row(ot));
    }
    Batch z = bn_ ? bn_->forward(pre, train) : std::move(pre);
    if (!bn_) {
      for (auto& m : z)
        for (int t = 0; t < m.rows(); ++t)
          for (int c = 0; c < m.cols(); ++c) m(t, c) += b_(0, c / spec_.out_freq());
    }
    if (train) z_cache_ = z;
    for (auto& m : z)
      for (int t = 0; t < m.rows(); ++t)
        for (int c = 0; c < m.cols(); ++c) m(t, c) = clipped_relu(m(t, c));
    has_cache_ = train;
    return z;
  }

  Batch backward(const Batch& dout) override {
    ASR_REQUIRE(has_cache_, "conv: backward without cached forward");
    Batch dz(dout.size());
    for (size_t bi = 0; bi < dout.size(); ++bi) {
      dz[bi] = Matrix(dout[bi].rows(), dout[bi].cols());
      for (int t = 0; t < dout[bi].rows(); ++t)
        for (int c = 0; c < dout[bi].cols(); ++c)
          dz[bi](t, c) = dout[bi](t, c) * clipped_relu_grad(z_cache_[bi](t, c));
    }
    if (!bn_) {
      for (const auto& m : dz)
        for (int t = 0; t < m.rows(); ++t)
          for (int c = 0; c < m.cols(); ++c) db_(0, c / spec_.out_freq()) += m(t, c);
    }
    Batch dpre = bn_ ? bn_->backward(dz) : std::move(dz);

    Batch dx(dout.size());
    int ff = spec_.filter_freq, ft = spec_.filter_time;
    int fin = spec_.in_freq, cin = spec_.in_channels;
    int fout = spec_.out_freq();
    for (size_t bi = 0; bi < dout.size(); ++bi) {
      const Matrix& x = x_cache_[bi];
      dx[bi] = Matrix(x.rows(), x.cols());
      for (int ot = 0; ot < dpre[bi].rows(); ++ot) {
        for (int oc = 0; oc < spec_.out_channels; ++oc) {
          const real* wrow = w_.row(oc);
          real* dwrow = dw_.row(oc);
          for (int of = 0; of < fout; ++of) {
            real g = dpre[bi](ot, oc * fout + of);
            if (g == 0) continue;
            for (int ic = 0; ic < cin; ++ic) {
              for (int dt = 0; dt < ft; ++dt) {
                int it = ot * spec_.stride_time - pad_time_top() + dt;
                if (it < 0 || it >= x.rows()) continue;
                for (int df = 0; df < ff; ++df) {
                  int fi = of * spec_.stride_freq - pad_freq_left() + df;
                  if (fi < 0 || fi >= fin) continue;
                  int widx = (ic * ft + dt) * ff + df;
                  dwrow[widx] += g * x(it, ic * fin + fi);
                  dx[bi](it, ic * fin + fi) += g * wrow[widx];
                }
              }
            }
          }
        }
      }
    }
    has_cache_ = false;
    return dx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef>& out) override {
    out.push_back({prefix + ".w", &w_, &dw_});
    if (bn_) {
      bn_->collect(prefix + ".bn", out);
    } else {
      out.push_back({prefix + ".b", &b_, &db_});
    }
  }

  std::vector<SeqBatchNorm*> batchnorms() override { return bn_ ? std::vector<SeqBatchNorm*>{bn_.get()} : std::vector<SeqBatchNorm*>{}; }

  std::unique_ptr<LayerStream> make_stream() const override {
    if (bn_)
      ASR_REQUIRE(bn_->running().primed(), "conv: streaming requires primed BatchNorm statistics");
    return std::make_unique<ConvStream>();
  }

  Matrix stream_push(LayerStream& state, const Matrix& frames) const override {
    auto& st = static_cast<ConvStream&>(state);
    for (int t = 0; t < frames.rows(); ++t) {
      ASR_REQUIRE(frames.cols() == input_dim(), "conv stream: input dim mismatch");
      st.pending.emplace_back(frames.row(t), frames.row(t) + frames.cols());
      ++st.received;
    }
    std::vector<std::vector<real>> rows;
    while (st.emitted * spec_.stride_time - pad_time_top() + spec_.filter_time <= st.received) {
      rows.push_back(stream_out_row(st));
      ++st.emitted;
      trim(st);
    }
    return rows_to_matrix(rows, output_dim());
  }

  Matrix stream_flush(LayerStream& state) const override {
    auto& st = static_cast<ConvStream&>(state);
    long total_out = st.received == 0 ? 0 : out_frames(static_cast<int>(st.received));
    std::vector<std::vector<real>> rows;
    while (st.emitted < total_out) {
      rows.push_back(stream_out_row(st));
      ++st.emitted;
    }
    return rows_to_matrix(rows, output_dim());
  }

  std::vector<uint32_t> config_words() const override {
    return {static_cast<uint32_t>(spec_.in_channels), static_cast<uint32_t>(spec_.out_channels),
            static_cast<uint32_t>(spec_.filter_freq), static_cast<uint32_t>(spec_.filter_time),
            static_cast<uint32_t>(spec_.stride_freq), static_cast<uint32_t>(spec_.stride_time),
            static_cast<uint32_t>(spec_.in_freq), bn_ ? 1u : 0u};
  }

 private:
  // One output row; `row_at(it)` returns the input row at absolute index
  // `it` or nullptr where zero padding applies. Accumulation order is
  // fixed (ic, dt, df) so batch and stream paths agree bitwise.
  template <typename RowAt>
  void conv_row(RowAt row_at, long ot, real* row) const {
    int ff = spec_.filter_freq, ft = spec_.filter_time;
    int fin = spec_.in_freq, cin = spec_.in_channels;
    int fout = spec_.out_freq();
    for (int oc = 0; oc < spec_.out_channels; ++oc) {
      const real* wrow = w_.row(oc);
      for (int of = 0; of < fout; ++of) {
        real acc = 0;
        for (int ic = 0; ic < cin; ++ic) {
          for (int dt = 0; dt < ft; ++dt) {
            const real* xrow = row_at(ot * spec_.stride_time - pad_time_top() + dt);
            if (xrow == nullptr) continue;
            for (int df = 0; df < ff; ++df) {
              int fi = of * spec_.stride_freq - pad_freq_left() + df;
              if (fi < 0 || fi >= fin) continue;
              acc += wrow[(ic * ft + dt) * ff + df] * xrow[ic * fin + fi];
            }
          }
        }
        row[oc * fout + of] = acc;
      }
    }
  }

  std::vector<real> stream_out_row(const ConvStream& st) const {
    std::vector<real> out(output_dim());
    conv_row(
        [&](long it) -> const real* {
          if (it < 0 || it >= st.received) return nullptr;
          long off = it - st.first_pending;
          return st.pending[static_cast<size_t>(off)].data();
        },
        st.emitted, out.data());
    int fout = spec_.out_freq();
    for (int c = 0; c < static_cast<int>(out.size()); ++c) {
      int u = c / fout;
      real v = bn_ ? bn_->apply_running(out[c], u) : out[c] + b_(0, u);
      out[c] = clipped_relu(v);
    }
    return out;
  }

  void trim(ConvStream& st) const {
    long oldest_needed = st.emitted * spec_.stride_time - pad_time_top();
    while (st.first_pending < oldest_needed && !st.pending.empty()) {
      st.pending.pop_front();
      ++st.first_pending;
    }
  }

  ConvSpec spec_;
  std::unique_ptr<SeqBatchNorm> bn_;
  Matrix w_, dw_;
  Matrix b_, db_;

  Batch x_cache_, z_cache_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Recurrent layers (simple RNN and GRU)

inline real sigmoid(real x) { return 1.0 / (1.0 + std::exp(-x)); }

struct RnnStream : LayerStream {
  std::vector<real> h;  // previous hidden state
};

class RecurrentLayer : public Layer {
 public:
  RecurrentLayer(RnnKind kind, Direction direction, int in_dim, int hidden, bool batchnorm)
      : kind_(kind), direction_(direction), in_dim_(in_dim), hidden_(hidden), use_bn_(batchnorm) {
    int gates = kind == RnnKind::kGru ? 3 : 1;
    int dirs = directions();
    for (int g = 0; g < gates; ++g) {
      w_.emplace_back(hidden, in_dim);
      dw_.emplace_back(hidden, in_dim);
      b_.emplace_back(1, hidden);
      db_.emplace_back(1, hidden);
      if (use_bn_) bn_.push_back(std::make_unique<SeqBatchNorm>(hidden));
      for (int d = 0; d < dirs; ++d) {
        u_.emplace_back(hidden, hidden);
        du_.emplace_back(hidden, hidden);
      }
    }
  }

  LayerKind kind() const override { return LayerKind::kRecurrent; }
  int input_dim() const override { return in_dim_; }
  int output_dim() const override { return hidden_; }
  bool streamable() const override { return direction_ == Direction::kForwardOnly; }

  int directions() const { return direction_ == Direction::kBidirectional ? 2 : 1; }
  int gates() const { return kind_ == RnnKind::kGru ? 3 : 1; }
  Matrix& u(int gate, int dir) { return u_[gate * directions() + dir]; }
  const Matrix& u(int gate, int dir) const { return u_[gate * directions() + dir]; }
  Matrix& du(int gate, int dir) { return du_[gate * directions() + dir]; }

  Batch forward(const Batch& in, bool train) override {
    size_t n = in.size();
    // Input-hidden projections for all gates, then optional sequence-wise
    // BatchNorm on each; shared across directions.
    std::vector<Batch> g(gates());
    for (int gate = 0; gate < gates(); ++gate) {
      Batch pre(n);
      for (size_t bi = 0; bi < n; ++bi) {
        ASR_REQUIRE(in[bi].cols() == in_dim_, "rnn: input dim mismatch");
        pre[bi] = matmul_nt(in[bi], w_[gate]);
      }
      g[gate] = use_bn_ ? bn_[gate]->forward(pre, train) : std::move(pre);
      if (!use_bn_) {
        for (auto& m : g[gate])
          for (int t = 0; t < m.rows(); ++t)
            for (int c = 0; c < m.cols(); ++c) m(t, c) += b_[gate](0, c);
      }
    }

    Batch out(n);
    if (train) {
      x_cache_ = in;
      cache_.assign(n, {});
    }
    for (size_t bi = 0; bi < n; ++bi) {
      int frames = in[bi].rows();
      out[bi] = Matrix(frames, hidden_);
      for (int d = 0; d < directions(); ++d) {
        DirCache dc = run_direction(g, bi, frames, d);
        for (int t = 0; t < frames; ++t)
          for (int c = 0; c < hidden_; ++c) out[bi](t, c) += dc.h(t, c);
        if (train) cache_[bi].push_back(std::move(dc));
      }
    }
    has_cache_ = train;
    return out;
  }

  Batch backward(const Batch& dout) override {
    ASR_REQUIRE(has_cache_, "rnn: backward without cached forward");
    size_t n = dout.size();
    std::vector<Batch> dg(gates());
    for (int gate = 0; gate < gates(); ++gate) {
      dg[gate].assign(n, Matrix());
      for (size_t bi = 0; bi < n; ++bi) dg[gate][bi] = Matrix(dout[bi].rows(), hidden_);
    }

    for (size_t bi = 0; bi < n; ++bi)
      for (int d = 0; d < directions(); ++d)
        backward_direction(dout[bi], bi, d, dg);

    Batch dx(n);
    for (size_t bi = 0; bi < n; ++bi) dx[bi] = Matrix(x_cache_[bi].rows(), in_dim_);
    for (int gate = 0; gate < gates(); ++gate) {
      Batch dpre = use_bn_ ? bn_[gate]->backward(dg[gate]) : std::move(dg[gate]);
      for (size_t bi = 0; bi < n; ++bi) {
        if (!use_bn_) {
          for (int t = 0; t < dpre[bi].rows(); ++t)
            for (int c = 0; c < hidden_; ++c) db_[gate](0, c) += dpre[bi](t, c);
        }
        add_inplace(dw_[gate], matmul_tn(dpre[bi], x_cache_[bi]));
        add_inplace(dx[bi], matmul(dpre[bi], w_[gate]));
      }
    }
    has_cache_ = false;
    return dx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef>& out) override {
    static const char* simple_names[] = {""};
    static const char* gru_names[] = {"_z", "_r", "_h"};
    const char** names = kind_ == RnnKind::kGru ? gru_names : simple_names;
    for (int gate = 0; gate < gates(); ++gate) {
      std::string g = names[gate];
      out.push_back({prefix + ".w" + g, &w_[gate], &dw_[gate]});
      for (int d = 0; d < directions(); ++d) {
        std::string dn = directions() == 2 ? (d == 0 ? "_fwd" : "_bwd") : "";
        out.push_back({prefix + ".u" + g + dn, &u(gate, d), &du(gate, d)});
      }
      if (use_bn_) {
        bn_[gate]->collect(prefix + ".bn" + g, out);
      } else {
        out.push_back({prefix + ".b" + g, &b_[gate], &db_[gate]});
      }
    }
  }

  std::vector<SeqBatchNorm*> batchnorms() override {
    std::vector<SeqBatchNorm*> out;
    for (auto& bn : bn_) out.push_back(bn.get());
    return out;
  }

  std::unique_ptr<LayerStream> make_stream() const override {
    ASR_REQUIRE(direction_ == Direction::kForwardOnly,
                "rnn: streaming requires a forward-only recurrence");
    if (use_bn_)
      for (const auto& bn : bn_)
        ASR_REQUIRE(bn->running().primed(), "rnn: streaming requires primed BatchNorm statistics");
    auto st = std::make_unique<RnnStream>();
    st->h.assign(hidden_, 0);
    return st;
  }

  Matrix stream_push(LayerStream& state, const Matrix& frames) const override {
    auto& st = static_cast<RnnStream&>(state);
    Matrix out(frames.rows(), hidden_);
    for (int t = 0; t < frames.rows(); ++t) {
      Matrix x(1, in_dim_);
      std::copy(frames.row(t), frames.row(t) + in_dim_, x.row(0));
      std::vector<real> h_new(hidden_);
      std::vector<std::vector<real>> g(gates(), std::vector<real>(hidden_));
      for (int gate = 0; gate < gates(); ++gate) {
        Matrix pre = matmul_nt(x, w_[gate]);
        for (int c = 0; c < hidden_; ++c)
          g[gate][c] = use_bn_ ? bn_[gate]->apply_running(pre(0, c), c) : pre(0, c) + b_[gate](0, c);
      }
      step(g, st.h, 0, h_new, nullptr);
      st.h = h_new;
      std::copy(h_new.begin(), h_new.end(), out.row(t));
    }
    return out;
  }

  Matrix stream_flush(LayerStream&) const override { return Matrix(); }

  std::vector<uint32_t> config_words() const override {
    return {static_cast<uint32_t>(kind_), static_cast<uint32_t>(direction_),
            static_cast<uint32_t>(in_dim_), static_cast<uint32_t>(hidden_), use_bn_ ? 1u : 0u};
  }

 private:
  struct DirCache {
    Matrix h;                       // T x H hidden states
    Matrix pre;                     // simple RNN: pre-activation
    Matrix z, r, uh, preh, htilde;  // GRU internals
  };

  // One recurrence step. `g[gate][c]` is the (normalized) input-hidden
  // term at the current frame, `h_prev` the previous hidden state of this
  // direction. Fills h_new; records internals when `dc` is non-null.
  void step(const std::vector<std::vector<real>>& g, const std::vector<real>& h_prev, int dir,
            std::vector<real>& h_new, DirCache* dc, int t = 0) const {
    if (kind_ == RnnKind::kSimple) {
      std::vector<real> pre(g[0]);
      gemv_acc(u(0, dir), h_prev.data(), pre.data());
      for (int c = 0; c < hidden_; ++c) {
        if (dc) dc->pre(t, c) = pre[c];
        h_new[c] = clipped_relu(pre[c]);
      }
      return;
    }
    std::vector<real> prez(g[0]), prer(g[1]), uh(hidden_, 0), preh(g[2]);
    gemv_acc(u(0, dir), h_prev.data(), prez.data());
    gemv_acc(u(1, dir), h_prev.data(), prer.data());
    gemv_acc(u(2, dir), h_prev.data(), uh.data());
    for (int c = 0; c < hidden_; ++c) {
      real zv = sigmoid(prez[c]);
      real rv = sigmoid(prer[c]);
      // The hidden state is multiplied by U_h before the reset gate scales
      // it, so all h_{t-1} work is one matrix product.
      real ph = preh[c] + rv * uh[c];
      real ht = clipped_relu(ph);
      h_new[c] = (1 - zv) * h_prev[c] + zv * ht;
      if (dc) {
        dc->z(t, c) = zv;
        dc->r(t, c) = rv;
        dc->uh(t, c) = uh[c];
        dc->preh(t, c) = ph;
        dc->htilde(t, c) = ht;
      }
    }
  }

  DirCache run_direction(const std::vector<Batch>& g, size_t bi, int frames, int dir) {
    DirCache dc;
    dc.h = Matrix(frames, hidden_);
    if (kind_ == RnnKind::kSimple) {
      dc.pre = Matrix(frames, hidden_);
    } else {
      dc.z = dc.r = dc.uh = dc.preh = dc.htilde = Matrix(frames, hidden_);
    }
    std::vector<real> h_prev(hidden_, 0), h_new(hidden_);
    std::vector<std::vector<real>> gt(gates(), std::vector<real>(hidden_));
    for (int step_i = 0; step_i < frames; ++step_i) {
      int t = dir == 0 ? step_i : frames - 1 - step_i;
      for (int gate = 0; gate < gates(); ++gate)
        for (int c = 0; c < hidden_; ++c) gt[gate][c] = g[gate][bi](t, c);
      step(gt, h_prev, dir, h_new, &dc, t);
      for (int c = 0; c < hidden_; ++c) dc.h(t, c) = h_new[c];
      h_prev = h_new;
    }
    return dc;
  }

  void backward_direction(const Matrix& dout, size_t bi, int dir, std::vector<Batch>& dg) {
    const DirCache& dc = cache_[bi][dir];
    int frames = dout.rows();
    std::vector<real> carry(hidden_, 0), h_prev(hidden_), dh(hidden_), tmp(hidden_);
    for (int step_i = frames - 1; step_i >= 0; --step_i) {
      int t = dir == 0 ? step_i : frames - 1 - step_i;
      int t_prev = dir == 0 ? t - 1 : t + 1;
      bool has_prev = dir == 0 ? t_prev >= 0 : t_prev < frames;
      for (int c = 0; c < hidden_; ++c) {
        h_prev[c] = has_prev ? dc.h(t_prev, c) : 0;
        dh[c] = dout(t, c) + carry[c];
      }
      std::fill(carry.begin(), carry.end(), 0);

      if (kind_ == RnnKind::kSimple) {
        for (int c = 0; c < hidden_; ++c) tmp[c] = dh[c] * clipped_relu_grad(dc.pre(t, c));
        for (int c = 0; c < hidden_; ++c) dg[0][bi](t, c) += tmp[c];
        accumulate_outer(du(0, dir), tmp, h_prev);
        accumulate_transposed(u(0, dir), tmp, carry);
        continue;
      }

      std::vector<real> dz(hidden_), dhtilde(hidden_), dpreh(hidden_), duh(hidden_), dprer(hidden_),
          dprez(hidden_);
      for (int c = 0; c < hidden_; ++c) {
        real zv = dc.z(t, c), rv = dc.r(t, c), ht = dc.htilde(t, c);
        dz[c] = dh[c] * (ht - h_prev[c]);
        dhtilde[c] = dh[c] * zv;
        carry[c] += dh[c] * (1 - zv);
        dpreh[c] = dhtilde[c] * clipped_relu_grad(dc.preh(t, c));
        duh[c] = dpreh[c] * rv;
        dprer[c] = dpreh[c] * dc.uh(t, c) * rv * (1 - rv);
        dprez[c] = dz[c] * zv * (1 - zv);
      }
      for (int c = 0; c < hidden_; ++c) {
        dg[0][bi](t, c) += dprez[c];
        dg[1][bi](t, c) += dprer[c];
        dg[2][bi](t, c) += dpreh[c];
      }
      accumulate_outer(du(0, dir), dprez, h_prev);
      accumulate_outer(du(1, dir), dprer, h_prev);
      accumulate_outer(du(2, dir), duh, h_prev);
      accumulate_transposed(u(0, dir), dprez, carry);
      accumulate_transposed(u(1, dir), dprer, carry);
      accumulate_transposed(u(2, dir), duh, carry);
    }
  }

  // dM += a * b^T
  static void accumulate_outer(Matrix& m, const std::vector<real>& a, const std::vector<real>& b) {
    for (int i = 0; i < m.rows(); ++i) {
      if (a[i] == 0) continue;
      real* row = m.row(i);
      for (int j = 0; j < m.cols(); ++j) row[j] += a[i] * b[j];
    }
  }

  // out += M^T * a
  static void accumulate_transposed(const Matrix& m, const std::vector<real>& a, std::vector<real>& out) {
    for (int i = 0; i < m.rows(); ++i) {
      if (a[i] == 0) continue;
      const real* row = m.row(i);
      for (int j = 0; j < m.cols(); ++j) out[j] += row[j] * a[i];
    }
  }

  RnnKind kind_;
  Direction direction_;
  int in_dim_, hidden_;
  bool use_bn_;
  std::vector<Matrix> w_, dw_, b_, db_;
  std::vector<Matrix> u_, du_;  // [gate * directions + dir]
  std::vector<std::unique_ptr<SeqBatchNorm>> bn_;

  Batch x_cache_;
  std::vector<std::vector<DirCache>> cache_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Row convolution

struct RowConvStream : LayerStream {
  std::deque<std::vector<real>> pending;
  long received = 0;
  long emitted = 0;
};

class RowConvLayer : public Layer {
 public:
  RowConvLayer(int dim, int tau) : dim_(dim), tau_(tau), w_(dim, tau + 1), dw_(dim, tau + 1) {
    ASR_REQUIRE(tau >= 0, "row conv: tau must be >= 0");
  }

  LayerKind kind() const override { return LayerKind::kRowConv; }
  int input_dim() const override { return dim_; }
  int output_dim() const override { return dim_; }
  int lookahead() const override { return tau_; }
  bool streamable() const override { return true; }

  Batch forward(const Batch& in, bool train) override {
    if (train) x_cache_ = in;
    Batch out(in.size());
    for (size_t bi = 0; bi < in.size(); ++bi) {
      ASR_REQUIRE(in[bi].cols() == dim_, "row conv: input dim mismatch");
      out[bi] = Matrix(in[bi].rows(), dim_);
      for (int t = 0; t < in[bi].rows(); ++t)
        for (int i = 0; i < dim_; ++i) {
          real acc = 0;
          for (int j = 0; j <= tau_; ++j) {
            int src = t + j;
            if (src >= in[bi].rows()) break;  // frames past the end are zero
            acc += w_(i, j) * in[bi](src, i);
          }
          out[bi](t, i) = acc;
        }
    }
    has_cache_ = train;
    return out;
  }

  Batch backward(const Batch& dout) override {
    ASR_REQUIRE(has_cache_, "row conv: backward without cached forward");
    Batch dx(dout.size());
    for (size_t bi = 0; bi < dout.size(); ++bi) {
      const Matrix& x = x_cache_[bi];
      dx[bi] = Matrix(x.rows(), dim_);
      for (int t = 0; t < dout[bi].rows(); ++t)
        for (int i = 0; i < dim_; ++i) {
          real g = dout[bi](t, i);
          if (g == 0) continue;
          for (int j = 0; j <= tau_; ++j) {
            int src = t + j;
            if (src >= x.rows()) break;
            dw_(i, j) += g * x(src, i);
            dx[bi](src, i) += g * w_(i, j);
          }
        }
    }
    has_cache_ = false;
    return dx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef>& out) override {
    out.push_back({prefix + ".w", &w_, &dw_});
  }

  std::unique_ptr<LayerStream> make_stream() const override { return std::make_unique<RowConvStream>(); }

  Matrix stream_push(LayerStream& state, const Matrix& frames) const override {
    auto& st = static_cast<RowConvStream&>(state);
    for (int t = 0; t < frames.rows(); ++t) {
      st.pending.emplace_back(frames.row(t), frames.row(t) + frames.cols());
      ++st.received;
    }
    std::vector<std::vector<real>> rows;
    while (st.emitted + tau_ < st.received) {
      rows.push_back(stream_row(st, false));
      st.pending.pop_front();
      ++st.emitted;
    }
    return rows_to_matrix(rows, dim_);
  }

  Matrix stream_flush(LayerStream& state) const override {
    auto& st = static_cast<RowConvStream&>(state);
    std::vector<std::vector<real>> rows;
    while (st.emitted < st.received) {
      rows.push_back(stream_row(st, true));
      st.pending.pop_front();
      ++st.emitted;
    }
    return rows_to_matrix(rows, dim_);
  }

  std::vector<uint32_t> config_words() const override {
    return {static_cast<uint32_t>(dim_), static_cast<uint32_t>(tau_)};
  }

 private:
  std::vector<real> stream_row(const RowConvStream& st, bool flushing) const {
    (void)flushing;
    std::vector<real> out(dim_);
    for (int i = 0; i < dim_; ++i) {
      real acc = 0;
      for (int j = 0; j <= tau_ && j < static_cast<int>(st.pending.size()); ++j)
        acc += w_(i, j) * st.pending[j][i];
      out[i] = acc;
    }
    return out;
  }

  int dim_, tau_;
  Matrix w_, dw_;
  Batch x_cache_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Fully connected

class FullyConnectedLayer : public Layer {
 public:
  FullyConnectedLayer(int in_dim, int out_dim, bool relu, bool batchnorm)
      : in_dim_(in_dim), out_dim_(out_dim), relu_(relu),
        bn_(batchnorm ? std::make_unique<SeqBatchNorm>(out_dim) : nullptr),
        w_(out_dim, in_dim), dw_(out_dim, in_dim), b_(1, out_dim), db_(1, out_dim) {}

  LayerKind kind() const override { return LayerKind::kFullyConnected; }
  int input_dim() const override { return in_dim_; }
  int output_dim() const override { return out_dim_; }
  bool streamable() const override { return true; }

  Batch forward(const Batch& in, bool train) override {
    if (train) x_cache_ = in;
    Batch pre(in.size());
    for (size_t bi = 0; bi < in.size(); ++bi) {
      ASR_REQUIRE(in[bi].cols() == in_dim_, "fc: input dim mismatch");
      pre[bi] = matmul_nt(in[bi], w_);
    }
    Batch z = bn_ ? bn_->forward(pre, train) : std::move(pre);
    if (!bn_) {
      for (auto& m : z)
        for (int t = 0; t < m.rows(); ++t)
          for (int c = 0; c < out_dim_; ++c) m(t, c) += b_(0, c);
    }
    if (train) z_cache_ = z;
    if (relu_) {
      for (auto& m : z)
        for (int t = 0; t < m.rows(); ++t)
          for (int c = 0; c < out_dim_; ++c) m(t, c) = clipped_relu(m(t, c));
    }
    has_cache_ = train;
    return z;
  }

  Batch backward(const Batch& dout) override {
    ASR_REQUIRE(has_cache_, "fc: backward without cached forward");
    Batch dz(dout.size());
    for (size_t bi = 0; bi < dout.size(); ++bi) {
      if (relu_) {
        dz[bi] = Matrix(dout[bi].rows(), out_dim_);
        for (int t = 0; t < dout[bi].rows(); ++t)
          for (int c = 0; c < out_dim_; ++c)
            dz[bi](t, c) = dout[bi](t, c) * clipped_relu_grad(z_cache_[bi](t, c));
      } else {
        dz[bi] = dout[bi];
      }
    }
    if (!bn_) {
      for (const auto& m : dz)
        for (int t = 0; t < m.rows(); ++t)
          for (int c = 0; c < out_dim_; ++c) db_(0, c) += m(t, c);
    }
    Batch dpre = bn_ ? bn_->backward(dz) : std::move(dz);
    Batch dx(dout.size());
    for (size_t bi = 0; bi < dout.size(); ++bi) {
      add_inplace(dw_, matmul_tn(dpre[bi], x_cache_[bi]));
      dx[bi] = matmul(dpre[bi], w_);
    }
    has_cache_ = false;
    return dx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef>& out) override {
    out.push_back({prefix + ".w", &w_, &dw_});
    if (bn_) {
      bn_->collect(prefix + ".bn", out);
    } else {
      out.push_back({prefix + ".b", &b_, &db_});
    }
  }

  std::vector<SeqBatchNorm*> batchnorms() override { return bn_ ? std::vector<SeqBatchNorm*>{bn_.get()} : std::vector<SeqBatchNorm*>{}; }

  std::unique_ptr<LayerStream> make_stream() const override {
    if (bn_)
      ASR_REQUIRE(bn_->running().primed(), "fc: streaming requires primed BatchNorm statistics");
    return std::make_unique<LayerStream>();
  }

  Matrix stream_push(LayerStream&, const Matrix& frames) const override {
    if (frames.rows() == 0) return Matrix();
    Matrix pre = matmul_nt(frames, w_);
    for (int t = 0; t < pre.rows(); ++t)
      for (int c = 0; c < out_dim_; ++c) {
        real v = bn_ ? bn_->apply_running(pre(t, c), c) : pre(t, c) + b_(0, c);
        pre(t, c) = relu_ ? clipped_relu(v) : v;
      }
    return pre;
  }

  Matrix stream_flush(LayerStream&) const override { return Matrix(); }

  std::vector<uint32_t> config_words() const override {
    return {static_cast<uint32_t>(in_dim_), static_cast<uint32_t>(out_dim_), relu_ ? 1u : 0u,
            bn_ ? 1u : 0u};
  }

 private:
  int in_dim_, out_dim_;
  bool relu_;
  std::unique_ptr<SeqBatchNorm> bn_;
  Matrix w_, dw_, b_, db_;
  Batch x_cache_, z_cache_;
  bool has_cache_ = false;
};

}  // namespace

std::unique_ptr<Layer> make_conv2d(const ConvSpec& spec, bool batchnorm) {
  return std::make_unique<Conv2dLayer>(spec, batchnorm);
}

std::unique_ptr<Layer> make_recurrent(RnnKind kind, Direction direction, int in_dim, int hidden,
                                      bool batchnorm) {
  return std::make_unique<RecurrentLayer>(kind, direction, in_dim, hidden, batchnorm);
}

std::unique_ptr<Layer> make_row_conv(int dim, int tau) {
  return std::make_unique<RowConvLayer>(dim, tau);
}

std::unique_ptr<Layer> make_fully_connected(int in_dim, int out_dim, bool relu, bool batchnorm) {
  return std::make_unique<FullyConnectedLayer>(in_dim, out_dim, relu, batchnorm);
}

}  // namespace asr::nn

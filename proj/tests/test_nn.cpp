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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "asr/ctc.hpp"
#include "asr/network.hpp"
#include "asr/nn.hpp"
#include "oracles.hpp"

using namespace asr;
using namespace asr::nn;

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols, double lo = -1, double hi = 1) {
  Matrix m(rows, cols);
  for (size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<real>(rng.uniform(lo, hi));
  return m;
}

// Tiny network with every layer type, built by hand so the row
// convolution can ride on a bidirectional stack.
Network kitchen_sink_net(int input_bins, int alphabet, uint64_t seed) {
  Network net;
  net.direction = Direction::kBidirectional;
  ConvSpec spec;
  spec.in_channels = 1;
  spec.out_channels = 2;
  spec.filter_freq = 3;
  spec.filter_time = 3;
  spec.stride_freq = 2;
  spec.stride_time = 2;
  spec.in_freq = input_bins;
  net.layers.push_back(make_conv2d(spec, /*batchnorm=*/true));
  int dim = 2 * spec.out_freq();
  net.layers.push_back(make_recurrent(RnnKind::kSimple, Direction::kBidirectional, dim, 4, true));
  net.layers.push_back(make_recurrent(RnnKind::kGru, Direction::kBidirectional, 4, 4, true));
  net.layers.push_back(make_row_conv(4, 2));
  net.layers.push_back(make_fully_connected(4, 5, /*relu=*/true, /*batchnorm=*/true));
  net.layers.push_back(make_fully_connected(5, alphabet + 1, false, false));
  init_params(net, seed);
  return net;
}

double batch_ctc_loss(Network& net, const Batch& inputs, const std::vector<std::vector<int>>& labels,
                      int blank) {
  Batch logits = net.forward(inputs, true);
  double total = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    auto res = ctc::ctc_loss_reference(logits[i], labels[i], blank);
    REQUIRE(res.feasible);
    total += res.loss;
  }
  return total;
}

}  // namespace

TEST_CASE("clipped relu clamps at 0 and 20") {
  CHECK(clipped_relu(25) == 20);
  CHECK(clipped_relu(-3) == 0);
  CHECK(clipped_relu(7) == 7);
  CHECK(clipped_relu_grad(25) == 0);
  CHECK(clipped_relu_grad(-1) == 0);
  CHECK(clipped_relu_grad(7) == 1);
}

TEST_CASE("softmax rows") {
  Matrix logits(1, 4, 2.5);
  Matrix p = softmax_rows(logits);
  for (int k = 0; k < 4; ++k) CHECK(p(0, k) == doctest::Approx(0.25).epsilon(1e-12));

  Matrix a(1, 3);
  a(0, 0) = 1;
  a(0, 1) = 2;
  a(0, 2) = 3;
  Matrix pa = softmax_rows(a);
  CHECK(pa(0, 0) == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(pa(0, 1) == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(pa(0, 2) == doctest::Approx(0.66524).epsilon(1e-4));

  Matrix b = a;
  for (int k = 0; k < 3; ++k) b(0, k) += 500;
  Matrix pb = softmax_rows(b);
  for (int k = 0; k < 3; ++k) CHECK(pb(0, k) == doctest::Approx(pa(0, k)).epsilon(1e-12));
}

TEST_CASE("conv: delta filter with unit tap reproduces clipped input") {
  ConvSpec spec;
  spec.in_channels = 1;
  spec.out_channels = 1;
  spec.filter_freq = 3;
  spec.filter_time = 3;
  spec.in_freq = 5;
  auto conv = make_conv2d(spec, false);
  std::vector<ParamRef> refs;
  conv->collect("c", refs);
  refs[0].value->fill(0);
  // center tap (dt=1, df=1)
  (*refs[0].value)(0, 1 * 3 + 1) = 1.0;

  Rng rng(2);
  Matrix x = random_matrix(rng, 6, 5, -5, 25);
  Batch out = conv->forward({x}, false);
  REQUIRE(out[0].rows() == 6);
  REQUIRE(out[0].cols() == 5);
  for (int t = 0; t < 6; ++t)
    for (int f = 0; f < 5; ++f) CHECK(out[0](t, f) == clipped_relu(x(t, f)));
}

TEST_CASE("conv: stride 2 halves the frame count, rounding up") {
  ConvSpec spec;
  spec.filter_time = 3;
  spec.filter_freq = 1;
  spec.stride_time = 2;
  spec.in_freq = 4;
  auto conv = make_conv2d(spec, false);
  Rng rng(3);
  Batch out = conv->forward({random_matrix(rng, 10, 4)}, false);
  CHECK(out[0].rows() == 5);
  Batch odd = conv->forward({random_matrix(rng, 11, 4)}, false);
  CHECK(odd[0].rows() == 6);
}

TEST_CASE("conv matches the nested-loop oracle") {
  ConvSpec spec;
  spec.filter_freq = 3;
  spec.filter_time = 3;
  spec.in_freq = 5;
  auto conv = make_conv2d(spec, false);
  std::vector<ParamRef> refs;
  conv->collect("c", refs);
  Rng rng(12);
  Matrix filter = random_matrix(rng, 3, 3);
  for (int dt = 0; dt < 3; ++dt)
    for (int df = 0; df < 3; ++df) (*refs[0].value)(0, dt * 3 + df) = filter(dt, df);

  Matrix x = random_matrix(rng, 5, 5, 0.0, 1.0);  // keep outputs in the linear region
  Batch out = conv->forward({x}, false);
  // pad_top = (3-1)/2 = 1, pad_left = 1
  Matrix want = oracle::naive_conv2d(x, filter, 1, 1, 1, 1, 5, 5);
  for (int t = 0; t < 5; ++t)
    for (int f = 0; f < 5; ++f)
      CHECK(out[0](t, f) == doctest::Approx(clipped_relu(want(t, f))).epsilon(1e-12));
}

TEST_CASE("conv error names the offending dimension") {
  ConvSpec spec;
  spec.in_freq = 8;
  auto conv = make_conv2d(spec, false);
  Matrix x(4, 5);
  CHECK_THROWS_WITH_AS(conv->forward({x}, false),
                       doctest::Contains("input dim mismatch"), std::runtime_error);
}

TEST_CASE("simple rnn with zero weights emits 2 f(b) everywhere") {
  auto rnn = make_recurrent(RnnKind::kSimple, Direction::kBidirectional, 3, 4, false);
  std::vector<ParamRef> refs;
  rnn->collect("r", refs);
  for (auto& ref : refs) ref.value->fill(0);
  // bias is the last ref for a bias-carrying simple rnn
  REQUIRE(refs.back().name == "r.b");
  refs.back().value->fill(1.3);

  Rng rng(1);
  Batch out = rnn->forward({random_matrix(rng, 5, 3)}, false);
  for (int t = 0; t < 5; ++t)
    for (int c = 0; c < 4; ++c)
      CHECK(out[0](t, c) == doctest::Approx(2 * clipped_relu(1.3)).epsilon(1e-12));
}

TEST_CASE("simple rnn matches a step-by-step scalar oracle") {
  int in = 2, hidden = 2, frames = 3;
  auto rnn = make_recurrent(RnnKind::kSimple, Direction::kBidirectional, in, hidden, false);
  std::vector<ParamRef> refs;
  rnn->collect("r", refs);
  Rng rng(77);
  for (auto& ref : refs)
    for (size_t i = 0; i < ref.value->size(); ++i)
      ref.value->data()[i] = static_cast<real>(rng.uniform(-0.7, 0.7));
  const Matrix& w = *refs[0].value;   // r.w
  const Matrix& uf = *refs[1].value;  // r.u_fwd
  const Matrix& ub = *refs[2].value;  // r.u_bwd
  const Matrix& b = *refs[3].value;   // r.b

  Matrix x = random_matrix(rng, frames, in);
  Batch out = rnn->forward({x}, false);

  auto f = [](double v) { return std::min(std::max(v, 0.0), 20.0); };
  std::vector<std::vector<double>> hf(frames, std::vector<double>(hidden, 0));
  std::vector<std::vector<double>> hb(frames, std::vector<double>(hidden, 0));
  for (int t = 0; t < frames; ++t)
    for (int c = 0; c < hidden; ++c) {
      double acc = b(0, c);
      for (int j = 0; j < in; ++j) acc += w(c, j) * x(t, j);
      for (int j = 0; j < hidden; ++j) acc += uf(c, j) * (t > 0 ? hf[t - 1][j] : 0.0);
      hf[t][c] = f(acc);
    }
  for (int t = frames - 1; t >= 0; --t)
    for (int c = 0; c < hidden; ++c) {
      double acc = b(0, c);
      for (int j = 0; j < in; ++j) acc += w(c, j) * x(t, j);
      for (int j = 0; j < hidden; ++j) acc += ub(c, j) * (t < frames - 1 ? hb[t + 1][j] : 0.0);
      hb[t][c] = f(acc);
    }
  for (int t = 0; t < frames; ++t)
    for (int c = 0; c < hidden; ++c)
      CHECK(out[0](t, c) == doctest::Approx(hf[t][c] + hb[t][c]).epsilon(1e-12));
}

TEST_CASE("gru matches a step-by-step scalar oracle") {
  int in = 2, hidden = 2, frames = 3;
  auto gru = make_recurrent(RnnKind::kGru, Direction::kForwardOnly, in, hidden, false);
  std::vector<ParamRef> refs;
  gru->collect("g", refs);
  Rng rng(31);
  for (auto& ref : refs)
    for (size_t i = 0; i < ref.value->size(); ++i)
      ref.value->data()[i] = static_cast<real>(rng.uniform(-0.8, 0.8));

  auto find = [&](const std::string& name) -> const Matrix& {
    for (auto& ref : refs)
      if (ref.name == name) return *ref.value;
    FAIL("missing param ", name);
    return *refs[0].value;
  };
  const Matrix &wz = find("g.w_z"), &uz = find("g.u_z"), &bz = find("g.b_z");
  const Matrix &wr = find("g.w_r"), &ur = find("g.u_r"), &br = find("g.b_r");
  const Matrix &wh = find("g.w_h"), &uh = find("g.u_h"), &bh = find("g.b_h");

  Matrix x = random_matrix(rng, frames, in);
  Batch out = gru->forward({x}, false);

  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  auto f = [](double v) { return std::min(std::max(v, 0.0), 20.0); };
  std::vector<double> h(hidden, 0);
  for (int t = 0; t < frames; ++t) {
    std::vector<double> z(hidden), r(hidden), uhv(hidden), ht(hidden), hn(hidden);
    for (int c = 0; c < hidden; ++c) {
      double az = bz(0, c), ar = br(0, c), au = 0;
      for (int j = 0; j < in; ++j) az += wz(c, j) * x(t, j);
      for (int j = 0; j < hidden; ++j) az += uz(c, j) * h[j];
      for (int j = 0; j < in; ++j) ar += wr(c, j) * x(t, j);
      for (int j = 0; j < hidden; ++j) ar += ur(c, j) * h[j];
      for (int j = 0; j < hidden; ++j) au += uh(c, j) * h[j];
      z[c] = sigmoid(az);
      r[c] = sigmoid(ar);
      uhv[c] = au;
    }
    for (int c = 0; c < hidden; ++c) {
      double ah = bh(0, c);
      for (int j = 0; j < in; ++j) ah += wh(c, j) * x(t, j);
      ah += r[c] * uhv[c];  // h_{t-1} multiplied by U_h before the reset scale
      ht[c] = f(ah);
      hn[c] = (1 - z[c]) * h[c] + z[c] * ht[c];
    }
    for (int c = 0; c < hidden; ++c) {
      CHECK(out[0](t, c) == doctest::Approx(hn[c]).epsilon(1e-12));
      h[c] = hn[c];
    }
  }
}

TEST_CASE("gru with the update gate forced shut holds its state") {
  auto gru = make_recurrent(RnnKind::kGru, Direction::kForwardOnly, 2, 3, false);
  std::vector<ParamRef> refs;
  gru->collect("g", refs);
  Rng rng(5);
  for (auto& ref : refs)
    for (size_t i = 0; i < ref.value->size(); ++i)
      ref.value->data()[i] = static_cast<real>(rng.uniform(-0.5, 0.5));
  for (auto& ref : refs) {
    if (ref.name == "g.w_z" || ref.name == "g.u_z") ref.value->fill(0);
    if (ref.name == "g.b_z") ref.value->fill(-40);  // sigmoid(-40) ~ 0
  }
  Batch out = gru->forward({random_matrix(rng, 6, 2)}, false);
  for (int t = 1; t < 6; ++t)
    for (int c = 0; c < 3; ++c)
      CHECK(out[0](t, c) == doctest::Approx(out[0](t - 1, c)).epsilon(1e-9));
}

TEST_CASE("bidirectional output equals the sum of directional passes") {
  int in = 3, hidden = 4, frames = 7;
  auto bi = make_recurrent(RnnKind::kSimple, Direction::kBidirectional, in, hidden, false);
  std::vector<ParamRef> refs;
  bi->collect("r", refs);
  Rng rng(15);
  for (auto& ref : refs)
    for (size_t i = 0; i < ref.value->size(); ++i)
      ref.value->data()[i] = static_cast<real>(rng.uniform(-0.6, 0.6));

  // Forward-only twin with u_fwd, fed normally; backward twin gets u_bwd
  // and time-reversed input.
  auto fwd = make_recurrent(RnnKind::kSimple, Direction::kForwardOnly, in, hidden, false);
  auto bwd = make_recurrent(RnnKind::kSimple, Direction::kForwardOnly, in, hidden, false);
  std::vector<ParamRef> fr, br;
  fwd->collect("r", fr);
  bwd->collect("r", br);
  auto get = [&](std::vector<ParamRef>& v, const std::string& n) -> Matrix* {
    for (auto& ref : v)
      if (ref.name == n) return ref.value;
    return nullptr;
  };
  *get(fr, "r.w") = *get(refs, "r.w");
  *get(br, "r.w") = *get(refs, "r.w");
  *get(fr, "r.u") = *get(refs, "r.u_fwd");
  *get(br, "r.u") = *get(refs, "r.u_bwd");
  *get(fr, "r.b") = *get(refs, "r.b");
  *get(br, "r.b") = *get(refs, "r.b");

  Matrix x = random_matrix(rng, frames, in);
  Matrix x_rev(frames, in);
  for (int t = 0; t < frames; ++t)
    for (int j = 0; j < in; ++j) x_rev(t, j) = x(frames - 1 - t, j);

  Batch sum = bi->forward({x}, false);
  Batch f = fwd->forward({x}, false);
  Batch brev = bwd->forward({x_rev}, false);
  for (int t = 0; t < frames; ++t)
    for (int c = 0; c < hidden; ++c)
      CHECK(sum[0](t, c) == f[0](t, c) + brev[0](frames - 1 - t, c));
}

TEST_CASE("sequence batchnorm: unit statistics, affine transfer, inference convergence") {
  SeqBatchNorm bn(3);
  Rng rng(21);
  Batch batch = {random_matrix(rng, 9, 3, -4, 4), random_matrix(rng, 14, 3, -4, 4)};

  Batch out = bn.forward(batch, true);
  for (int u = 0; u < 3; ++u) {
    double m = 0, v = 0;
    long n = 0;
    for (const auto& item : out)
      for (int t = 0; t < item.rows(); ++t) {
        m += item(t, u);
        ++n;
      }
    m /= n;
    for (const auto& item : out)
      for (int t = 0; t < item.rows(); ++t) v += (item(t, u) - m) * (item(t, u) - m);
    v /= n;
    CHECK(std::abs(m) < 1e-9);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));  // eps=1e-5 shrinks variance slightly
  }

  std::vector<ParamRef> refs;
  bn.collect("bn", refs);
  refs[0].value->fill(2.0);  // gamma
  refs[1].value->fill(5.0);  // beta
  Batch affine = bn.forward(batch, true);
  for (int u = 0; u < 3; ++u) {
    double m = 0, v = 0;
    long n = 0;
    for (const auto& item : affine)
      for (int t = 0; t < item.rows(); ++t) {
        m += item(t, u);
        ++n;
      }
    m /= n;
    for (const auto& item : affine)
      for (int t = 0; t < item.rows(); ++t) v += (item(t, u) - m) * (item(t, u) - m);
    v /= n;
    CHECK(m == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(v == doctest::Approx(4.0).epsilon(1e-3));
  }

  // Running averages settle on the (constant) batch statistics, so
  // inference mode reproduces train mode on that distribution.
  for (int i = 0; i < 300; ++i) bn.forward(batch, true);
  Batch train_out = bn.forward(batch, true);
  Batch infer_out = bn.forward(batch, false);
  for (size_t b = 0; b < batch.size(); ++b)
    for (int t = 0; t < batch[b].rows(); ++t)
      for (int u = 0; u < 3; ++u)
        CHECK(std::abs(infer_out[b](t, u) - train_out[b](t, u)) < 1e-3);
}

TEST_CASE("batchnorm preconditions") {
  SeqBatchNorm bn(2);
  Matrix one(1, 2, 1.0);
  CHECK_THROWS(bn.forward({Matrix(1, 2, 0.5)}, true));  // one element in batch x time... rows*width = 2? width=1 units=2 -> 1 row => 1*1<2
  SeqBatchNorm fresh(2);
  CHECK_THROWS(fresh.forward({one}, false));  // inference without primed stats
}

TEST_CASE("row conv: single tap of ones is the identity") {
  auto rc = make_row_conv(3, 0);
  std::vector<ParamRef> refs;
  rc->collect("rc", refs);
  refs[0].value->fill(1.0);
  Rng rng(4);
  Matrix x = random_matrix(rng, 5, 3);
  Batch out = rc->forward({x}, false);
  for (int t = 0; t < 5; ++t)
    for (int i = 0; i < 3; ++i) CHECK(out[0](t, i) == x(t, i));
}

TEST_CASE("row conv: final frame uses only in-range taps") {
  auto rc = make_row_conv(2, 2);
  std::vector<ParamRef> refs;
  rc->collect("rc", refs);
  Rng rng(6);
  Matrix w = random_matrix(rng, 2, 3);
  *refs[0].value = w;
  Matrix x = random_matrix(rng, 4, 2);
  Batch out = rc->forward({x}, false);
  for (int i = 0; i < 2; ++i)
    CHECK(out[0](3, i) == doctest::Approx(w(i, 0) * x(3, i)).epsilon(1e-12));
}

TEST_CASE("row conv matches direct summation") {
  int d = 3, tau = 2, frames = 5;
  auto rc = make_row_conv(d, tau);
  std::vector<ParamRef> refs;
  rc->collect("rc", refs);
  Rng rng(41);
  Matrix w = random_matrix(rng, d, tau + 1);
  *refs[0].value = w;
  Matrix x = random_matrix(rng, frames, d);
  Batch out = rc->forward({x}, false);
  for (int t = 0; t < frames; ++t)
    for (int i = 0; i < d; ++i) {
      double acc = 0;
      for (int j = 0; j <= tau; ++j)
        if (t + j < frames) acc += w(i, j) * x(t + j, i);
      CHECK(out[0](t, i) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("backward without cached forward throws") {
  auto fc = make_fully_connected(3, 2, true, false);
  Matrix d(4, 2, 1.0);
  CHECK_THROWS_WITH_AS(fc->backward({d}), doctest::Contains("without cached forward"),
                       std::runtime_error);
  auto rc = make_row_conv(2, 1);
  CHECK_THROWS(rc->backward({d}));
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Network net = kitchen_sink_net(6, 3, 99);
  Rng rng(10);
  Batch in = {random_matrix(rng, 6, 6), random_matrix(rng, 5, 6)};
  Batch logits = net.forward(in, true);
  Batch zeros(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) zeros[i] = Matrix(logits[i].rows(), logits[i].cols());
  net.backward(zeros);
  for (real g : get_grads(net)) CHECK(g == 0);
}

TEST_CASE("full-stack analytic gradients match finite differences") {
  Network net = kitchen_sink_net(6, 3, 424242);
  Rng rng(55);
  Batch in = {random_matrix(rng, 6, 6), random_matrix(rng, 8, 6)};
  std::vector<std::vector<int>> labels = {{0, 2}, {1, 0, 1}};

  zero_grads(net);
  Batch logits = net.forward(in, true);
  Batch dlogits(logits.size());
  double base_loss = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    auto res = ctc::ctc_loss_reference(logits[i], labels[i], 3);
    REQUIRE(res.feasible);
    base_loss += res.loss;
    dlogits[i] = res.logit_grad;
  }
  net.backward(dlogits);
  ParamVector analytic = get_grads(net);

  ParamVector theta = get_params(net);
  double h = 1e-6;
  int checked = 0, worst_idx = -1;
  double worst = 0;
  for (size_t i = 0; i < theta.size(); ++i) {
    ParamVector probe = theta;
    probe[i] = theta[i] + h;
    set_params(net, probe);
    double up = batch_ctc_loss(net, in, labels, 3);
    probe[i] = theta[i] - h;
    set_params(net, probe);
    double down = batch_ctc_loss(net, in, labels, 3);
    double fd = (up - down) / (2 * h);
    double rel = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
    if (rel > worst) {
      worst = rel;
      worst_idx = static_cast<int>(i);
    }
    ++checked;
  }
  set_params(net, theta);
  INFO("worst index ", worst_idx, " of ", checked, " rel ", worst, " base loss ", base_loss);
  CHECK(worst <= 1e-5);
}

TEST_CASE("forward pass is batch-order independent without BatchNorm") {
  NetworkConfig cfg;
  cfg.input_bins = 4;
  cfg.alphabet_size = 2;
  cfg.batchnorm = false;
  cfg.rnn_layers = 1;
  cfg.hidden = 5;
  Network net = build_network(cfg);
  init_params(net, 7);
  Rng rng(70);
  Matrix a = random_matrix(rng, 6, 4), b = random_matrix(rng, 9, 4);
  Batch ab = net.forward({a, b}, false);
  Batch ba = net.forward({b, a}, false);
  for (int t = 0; t < ab[0].rows(); ++t)
    for (int c = 0; c < ab[0].cols(); ++c) CHECK(ab[0](t, c) == ba[1](t, c));
}

TEST_CASE("param vector round trip is the identity") {
  Network net = kitchen_sink_net(6, 3, 2024);
  ParamVector before = get_params(net);
  set_params(net, before);
  ParamVector after = get_params(net);
  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("checkpoint round trip preserves parameters and running stats") {
  NetworkConfig cfg;
  cfg.input_bins = 8;
  cfg.alphabet_size = 4;
  cfg.direction = Direction::kForwardOnly;
  cfg.rnn_kind = RnnKind::kGru;
  cfg.rnn_layers = 2;
  cfg.hidden = 6;
  cfg.row_conv_tau = 2;
  cfg.fc_layers = 1;
  ConvSpec conv;
  conv.out_channels = 2;
  conv.filter_freq = 3;
  conv.filter_time = 3;
  conv.stride_time = 2;
  cfg.convs = {conv};
  cfg.alphabet_hash = 0xabcdef12345678ULL;
  Network net = build_network(cfg);
  init_params(net, 31337);

  // Prime BatchNorm running stats with one training batch.
  Rng rng(9);
  net.forward({random_matrix(rng, 12, 8), random_matrix(rng, 7, 8)}, true);

  auto dir = std::filesystem::temp_directory_path();
  auto p1 = (dir / "asr_ckpt_a.bin").string();
  auto p2 = (dir / "asr_ckpt_b.bin").string();
  save_checkpoint(net, p1);
  Network back = load_checkpoint(p1);
  CHECK(back.alphabet_hash == cfg.alphabet_hash);
  CHECK(back.direction == Direction::kForwardOnly);

  ParamVector a = get_params(net), b = get_params(back);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // Re-saving the loaded network writes byte-identical output.
  save_checkpoint(back, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(s1.substr(0, 4) == "DS2C");
  std::remove(p1.c_str());
  std::remove(p2.c_str());

  // Outputs agree after reload (inference mode exercises running stats).
  Matrix x = random_matrix(rng, 10, 8);
  Batch y1 = net.forward({x}, false);
  Batch y2 = back.forward({x}, false);
  for (int t = 0; t < y1[0].rows(); ++t)
    for (int c = 0; c < y1[0].cols(); ++c) CHECK(y1[0](t, c) == y2[0](t, c));
}

TEST_CASE("sizing helper hits a parameter budget within 1%") {
  NetworkConfig cfg;
  cfg.input_bins = 32;
  cfg.alphabet_size = 28;
  cfg.rnn_layers = 3;
  cfg.fc_layers = 1;
  for (long target : {500000L, 2000000L, 8000000L}) {
    int width = size_hidden_for_budget(cfg, target);
    cfg.hidden = width;
    long got = count_params(cfg);
    CHECK(std::abs(got - target) <= 0.01 * target);
  }
}

TEST_CASE("streaming equals batch forward for chunk sizes 1, 7 and full") {
  NetworkConfig cfg;
  cfg.input_bins = 6;
  cfg.alphabet_size = 3;
  cfg.direction = Direction::kForwardOnly;
  cfg.rnn_kind = RnnKind::kGru;
  cfg.rnn_layers = 2;
  cfg.hidden = 5;
  cfg.row_conv_tau = 2;
  ConvSpec conv;
  conv.out_channels = 2;
  conv.filter_freq = 3;
  conv.filter_time = 5;
  conv.stride_time = 2;
  conv.stride_freq = 2;
  cfg.convs = {conv};
  Network net = build_network(cfg);
  init_params(net, 606);
  Rng rng(61);
  net.forward({random_matrix(rng, 15, 6), random_matrix(rng, 11, 6)}, true);  // prime BN

  Matrix x = random_matrix(rng, 23, 6);
  Batch full = net.forward({x}, false);

  for (int chunk : {1, 7, 23}) {
    auto stream = net.new_stream();
    std::vector<Matrix> pieces;
    for (int start = 0; start < x.rows(); start += chunk) {
      int n = std::min(chunk, x.rows() - start);
      Matrix part(n, 6);
      for (int t = 0; t < n; ++t)
        for (int c = 0; c < 6; ++c) part(t, c) = x(start + t, c);
      pieces.push_back(net.stream_push(*stream, part));
    }
    pieces.push_back(net.stream_flush(*stream));
    int rows = 0;
    for (const auto& p : pieces) rows += p.rows();
    REQUIRE(rows == full[0].rows());
    int t = 0;
    for (const auto& p : pieces)
      for (int i = 0; i < p.rows(); ++i, ++t)
        for (int c = 0; c < full[0].cols(); ++c)
          CHECK(std::abs(p(i, c) - full[0](t, c)) < 1e-10);
  }
}

TEST_CASE("streamed prefixes depend only on received frames (causality)") {
  NetworkConfig cfg;
  cfg.input_bins = 4;
  cfg.alphabet_size = 2;
  cfg.direction = Direction::kForwardOnly;
  cfg.batchnorm = false;
  cfg.rnn_layers = 1;
  cfg.hidden = 4;
  cfg.row_conv_tau = 1;
  ConvSpec conv;
  conv.filter_time = 3;
  conv.filter_freq = 3;
  cfg.convs = {conv};
  Network net = build_network(cfg);
  init_params(net, 13);

  Rng rng(14);
  Matrix x = random_matrix(rng, 12, 4);
  Matrix y = random_matrix(rng, 12, 4);
  // Same first 8 frames, different tails.
  for (int t = 0; t < 8; ++t)
    for (int c = 0; c < 4; ++c) y(t, c) = x(t, c);

  auto sa = net.new_stream();
  auto sb = net.new_stream();
  Matrix outa = net.stream_push(*sa, x);
  Matrix outb = net.stream_push(*sb, y);
  // Only compare the part both streams have emitted from the shared
  // prefix; emission count is deterministic, so rows match up to the
  // lookahead boundary.
  int shared_inputs = 8;
  int safe_rows = 0;
  int stride = net.total_stride(), look = net.lookahead_frames();
  while ((safe_rows * stride - (stride - 1)) + look < shared_inputs) ++safe_rows;
  safe_rows = std::min({safe_rows, outa.rows(), outb.rows()});
  REQUIRE(safe_rows > 0);
  for (int t = 0; t < safe_rows; ++t)
    for (int c = 0; c < outa.cols(); ++c) CHECK(outa(t, c) == outb(t, c));
}

TEST_CASE("bidirectional networks refuse to stream") {
  NetworkConfig cfg;
  cfg.input_bins = 4;
  cfg.alphabet_size = 2;
  cfg.batchnorm = false;
  Network net = build_network(cfg);
  init_params(net, 1);
  CHECK_FALSE(net.streamable());
  CHECK_THROWS_WITH_AS(net.new_stream(), doctest::Contains("forward-only"), std::runtime_error);
}

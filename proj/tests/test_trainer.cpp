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
#include <thread>

#include "asr/trainer.hpp"

using namespace asr;
using namespace asr::trainer;

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<real>(rng.uniform(-1, 1));
  return m;
}

nn::Network tiny_net(int bins, int alphabet, bool batchnorm, uint64_t seed) {
  nn::NetworkConfig cfg;
  cfg.input_bins = bins;
  cfg.alphabet_size = alphabet;
  cfg.batchnorm = batchnorm;
  cfg.rnn_layers = 1;
  cfg.hidden = 6;
  nn::Network net = nn::build_network(cfg);
  nn::init_params(net, seed);
  return net;
}

Dataset random_dataset(Rng& rng, int n, int bins, int alphabet) {
  Dataset ds;
  for (int i = 0; i < n; ++i) {
    int frames = 5 + static_cast<int>(rng.below(6));
    Utterance u;
    u.features = random_matrix(rng, frames, bins);
    int len = 1 + static_cast<int>(rng.below(2));
    for (int j = 0; j < len; ++j) u.label.push_back(static_cast<int>(rng.below(alphabet)));
    ds.push_back(std::move(u));
  }
  return ds;
}

}  // namespace

TEST_CASE("sortagrad epoch 0 sorts by length") {
  std::vector<int> lengths = {5, 1, 3};
  auto order = sortagrad_order(lengths, 1, 0, 7, true);
  REQUIRE(order.size() == 3);
  CHECK(lengths[order[0]] == 1);
  CHECK(lengths[order[1]] == 3);
  CHECK(lengths[order[2]] == 5);
}

TEST_CASE("sortagrad batch-max lengths are non-decreasing in epoch 0") {
  Rng rng(3);
  std::vector<int> lengths;
  for (int i = 0; i < 100; ++i) lengths.push_back(1 + static_cast<int>(rng.below(50)));
  int batch = 8;
  auto order = sortagrad_order(lengths, batch, 0, 5, true);
  int prev_max = 0;
  for (size_t b = 0; b < order.size(); b += batch) {
    int mx = 0;
    for (size_t i = b; i < std::min(order.size(), b + batch); ++i)
      mx = std::max(mx, lengths[order[i]]);
    CHECK(mx >= prev_max);
    prev_max = mx;
  }
}

TEST_CASE("sortagrad later epochs shuffle deterministically") {
  std::vector<int> lengths = {4, 9, 2, 7, 5, 1, 8, 3};
  auto a = sortagrad_order(lengths, 2, 1, 42, true);
  auto b = sortagrad_order(lengths, 2, 1, 42, true);
  CHECK(a == b);
  auto c = sortagrad_order(lengths, 2, 2, 42, true);
  CHECK(a != c);  // different epoch, different permutation
  // Every index appears exactly once.
  std::vector<size_t> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("equal lengths preserve original relative order") {
  std::vector<int> lengths = {4, 4, 4, 4};
  auto order = sortagrad_order(lengths, 2, 0, 1, true);
  CHECK(order == std::vector<size_t>{0, 1, 2, 3});
}

TEST_CASE("gradient clipping rescales to the threshold") {
  nn::ParamVector g = {300, 400, 0, 0};  // norm 500
  bool fired = clip_gradient(g, 400);
  CHECK(fired);
  double norm = std::sqrt(g[0] * g[0] + g[1] * g[1]);
  CHECK(norm == doctest::Approx(400.0).epsilon(1e-12));
  CHECK(g[0] / g[1] == doctest::Approx(300.0 / 400.0).epsilon(1e-12));  // direction kept

  nn::ParamVector small = {30, 40};
  CHECK_FALSE(clip_gradient(small, 400));
  CHECK(small[0] == 30);

  nn::ParamVector zero = {0, 0, 0};
  CHECK_FALSE(clip_gradient(zero, 400));
  for (real v : zero) CHECK(v == 0);

  nn::ParamVector bad = {1, std::nan("")};
  CHECK_THROWS_WITH_AS(clip_gradient(bad, 400), doctest::Contains("NaN"), std::runtime_error);
}

TEST_CASE("clip output norm never exceeds threshold") {
  Rng rng(12);
  for (int it = 0; it < 50; ++it) {
    nn::ParamVector g(20);
    for (auto& v : g) v = static_cast<real>(rng.uniform(-200, 200));
    clip_gradient(g, 400);
    double norm = 0;
    for (real v : g) norm += static_cast<double>(v) * v;
    CHECK(std::sqrt(norm) <= 400.0 + 1e-9);
  }
}

TEST_CASE("nesterov step: momentum off is plain SGD") {
  nn::ParamVector p = {1.0, -2.0}, g = {0.5, 0.25}, v;
  nesterov_step(p, g, v, 0.1, 0.0);
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(-2.0 - 0.1 * 0.25).epsilon(1e-15));
}

TEST_CASE("nesterov step: two-step closed form with constant gradient") {
  // v1 = g, theta1 = theta0 - lr*1.5g; v2 = 1.5g, theta2 = theta1 - lr*1.75g.
  nn::ParamVector p = {0.0}, g = {1.0}, v;
  double lr = 0.01;
  nesterov_step(p, g, v, lr, 0.5);
  CHECK(p[0] == doctest::Approx(-lr * 1.5).epsilon(1e-14));
  nesterov_step(p, g, v, lr, 0.5);
  CHECK(p[0] == doctest::Approx(-lr * (1.5 + 1.75)).epsilon(1e-14));
}

TEST_CASE("nesterov step: zero learning rate moves only the velocity") {
  nn::ParamVector p = {3.0}, g = {2.0}, v = {1.0};
  nesterov_step(p, g, v, 0.0, 0.9);
  CHECK(p[0] == 3.0);
  CHECK(v[0] == doctest::Approx(0.9 * 1.0 + 2.0).epsilon(1e-15));
}

TEST_CASE("learning rate anneals by the configured factor per epoch") {
  Rng rng(5);
  nn::Network net = tiny_net(4, 2, false, 11);
  Dataset ds = random_dataset(rng, 4, 4, 2);
  TrainConfig cfg;
  cfg.learning_rate = 1.2e-3;
  cfg.minibatch_size = 4;
  OptimizerState state;
  for (int epoch = 0; epoch < 4; ++epoch) {
    auto stats = train_epoch(net, ds, cfg, state, epoch);
    CHECK(stats.learning_rate ==
          doctest::Approx(1.2e-3 / std::pow(1.2, epoch)).epsilon(1e-12));
  }
}

TEST_CASE("loss decreases on a one-example dataset") {
  Rng rng(8);
  nn::Network net = tiny_net(4, 2, false, 21);
  Dataset ds;
  Utterance u;
  u.features = random_matrix(rng, 8, 4);
  u.label = {0, 1};
  ds.push_back(std::move(u));

  TrainConfig cfg;
  cfg.learning_rate = 2e-3;
  cfg.momentum = 0.9;
  cfg.minibatch_size = 1;
  cfg.sortagrad = false;
  OptimizerState state;
  double prev = evaluate_mean_loss(net, ds);
  double last = prev;
  for (int step = 0; step < 20; ++step) {
    train_epoch(net, ds, cfg, state, 0);
    last = evaluate_mean_loss(net, ds);
  }
  CHECK(last < prev);
}

TEST_CASE("data-parallel equivalence: 4 workers x batch 2 == 1 worker x batch 8") {
  Rng rng(2025);
  Dataset ds = random_dataset(rng, 8, 4, 2);

  // Single worker, global batch 8.
  nn::Network single = tiny_net(4, 2, false, 77);
  TrainConfig cfg1;
  cfg1.minibatch_size = 8;
  cfg1.learning_rate = 1e-3;
  OptimizerState s1;
  for (int epoch = 0; epoch < 5; ++epoch) train_epoch(single, ds, cfg1, s1, epoch);
  nn::ParamVector want = get_params(single);

  // Four workers, local batch 2.
  allreduce::InProcessHub hub(4);
  std::vector<nn::Network> nets;
  for (int r = 0; r < 4; ++r) nets.push_back(tiny_net(4, 2, false, 77));
  std::vector<OptimizerState> states(4);
  for (int epoch = 0; epoch < 5; ++epoch) {
    std::vector<std::thread> threads;
    for (int r = 0; r < 4; ++r) {
      threads.emplace_back([&, r] {
        TrainConfig cfg4;
        cfg4.minibatch_size = 2;
        cfg4.learning_rate = 1e-3;
        train_epoch(nets[r], ds, cfg4, states[r], epoch, {r, 4}, &hub.transport(r));
      });
    }
    for (auto& th : threads) th.join();
  }

  for (int r = 0; r < 4; ++r) {
    nn::ParamVector got = get_params(nets[r]);
    REQUIRE(got.size() == want.size());
    double worst = 0;
    for (size_t i = 0; i < got.size(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(got[i]) - want[i]));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("training is bitwise reproducible run to run") {
  auto run = [&] {
    Rng rng(1);
    Dataset ds = random_dataset(rng, 6, 4, 2);
    nn::Network net = tiny_net(4, 2, true, 5);
    TrainConfig cfg;
    cfg.minibatch_size = 3;
    cfg.learning_rate = 8e-4;
    OptimizerState state;
    for (int epoch = 0; epoch < 3; ++epoch) train_epoch(net, ds, cfg, state, epoch);
    return get_params(net);
  };
  nn::ParamVector a = run();
  nn::ParamVector b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("optimizer state round trips through its file format") {
  OptimizerState state;
  state.velocity = {1.5, -2.25, 0.0, 1e-9};
  state.epoch = 7;
  state.learning_rate = 3.14e-4;
  auto path = (std::filesystem::temp_directory_path() / "asr_opt_state.bin").string();
  state.save(path);
  OptimizerState back = OptimizerState::load(path);
  CHECK(back.epoch == 7);
  CHECK(back.learning_rate == 3.14e-4);
  REQUIRE(back.velocity.size() == 4);
  for (size_t i = 0; i < 4; ++i) CHECK(back.velocity[i] == state.velocity[i]);
  std::remove(path.c_str());
}

TEST_CASE("multi-worker run requires a transport") {
  Rng rng(2);
  Dataset ds = random_dataset(rng, 4, 4, 2);
  nn::Network net = tiny_net(4, 2, false, 3);
  TrainConfig cfg;
  OptimizerState state;
  CHECK_THROWS(train_epoch(net, ds, cfg, state, 0, {0, 4}, nullptr));
}

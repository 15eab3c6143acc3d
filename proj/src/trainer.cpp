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

#include "asr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "asr/ctc.hpp"

namespace asr::trainer {

void OptimizerState::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  ASR_REQUIRE(os.good(), "OptimizerState: cannot open " + path);
  uint64_t n = velocity.size();
  os.write(reinterpret_cast<const char*>(&n), 8);
  os.write(reinterpret_cast<const char*>(&epoch), sizeof(epoch));
  os.write(reinterpret_cast<const char*>(&learning_rate), sizeof(learning_rate));
  for (real v : velocity) {
    double d = v;
    os.write(reinterpret_cast<const char*>(&d), 8);
  }
}

OptimizerState OptimizerState::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  ASR_REQUIRE(is.good(), "OptimizerState: cannot open " + path);
  OptimizerState state;
  uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), 8);
  is.read(reinterpret_cast<char*>(&state.epoch), sizeof(state.epoch));
  is.read(reinterpret_cast<char*>(&state.learning_rate), sizeof(state.learning_rate));
  state.velocity.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    double d;
    is.read(reinterpret_cast<char*>(&d), 8);
    state.velocity[i] = static_cast<real>(d);
  }
  ASR_REQUIRE(is.good(), "OptimizerState: truncated file " + path);
  return state;
}

std::vector<size_t> sortagrad_order(const std::vector<int>& lengths, int global_batch, int epoch,
                                    uint64_t seed, bool sortagrad_on) {
  ASR_REQUIRE(global_batch >= 1, "sortagrad_order: batch size must be >= 1");
  size_t n = lengths.size();
  std::vector<size_t> indices(n);
  std::iota(indices.begin(), indices.end(), 0);

  if (!sortagrad_on) {
    Rng rng(seed * 0x9e3779b9ULL + static_cast<uint64_t>(epoch) + 1);
    rng.shuffle(indices);
    return indices;
  }

  std::stable_sort(indices.begin(), indices.end(),
                   [&](size_t a, size_t b) { return lengths[a] < lengths[b]; });
  if (epoch == 0) return indices;

  // Later epochs keep the length-grouped minibatch composition and visit
  // the minibatches in a seeded random order.
  size_t batches = (n + global_batch - 1) / global_batch;
  std::vector<size_t> batch_order(batches);
  std::iota(batch_order.begin(), batch_order.end(), 0);
  Rng rng(seed * 0x9e3779b9ULL + static_cast<uint64_t>(epoch) + 1);
  rng.shuffle(batch_order);

  std::vector<size_t> out;
  out.reserve(n);
  for (size_t b : batch_order) {
    size_t begin = b * global_batch;
    size_t end = std::min(n, begin + global_batch);
    for (size_t i = begin; i < end; ++i) out.push_back(indices[i]);
  }
  return out;
}

bool clip_gradient(nn::ParamVector& grad, double threshold) {
  ASR_REQUIRE(threshold > 0, "clip_gradient: threshold must be positive");
  double norm_sq = 0;
  for (real g : grad) {
    ASR_REQUIRE(!std::isnan(g), "clip_gradient: NaN gradient (training bug)");
    norm_sq += static_cast<double>(g) * g;
  }
  double norm = std::sqrt(norm_sq);
  if (norm <= threshold) return false;
  real scale = static_cast<real>(threshold / norm);
  for (real& g : grad) g *= scale;
  return true;
}

void nesterov_step(nn::ParamVector& params, const nn::ParamVector& grads, nn::ParamVector& velocity,
                   double lr, double momentum) {
  ASR_REQUIRE(params.size() == grads.size(), "nesterov_step: shape mismatch");
  if (velocity.empty()) velocity.assign(params.size(), 0);
  ASR_REQUIRE(velocity.size() == params.size(), "nesterov_step: velocity shape mismatch");
  real mu = static_cast<real>(momentum);
  real eta = static_cast<real>(lr);
  for (size_t i = 0; i < params.size(); ++i) {
    velocity[i] = mu * velocity[i] + grads[i];
    params[i] -= eta * (grads[i] + mu * velocity[i]);
  }
}

EpochStats train_epoch(nn::Network& net, const Dataset& dataset, const TrainConfig& cfg,
                       OptimizerState& state, int epoch, allreduce::RingTopology topo,
                       allreduce::Transport* comm) {
  ASR_REQUIRE(!dataset.empty(), "train_epoch: dataset is empty");
  ASR_REQUIRE(topo.size == 1 || comm != nullptr, "train_epoch: multi-worker run needs a transport");
  auto started = std::chrono::steady_clock::now();

  int blank = net.output_dim() - 1;
  std::vector<int> lengths(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) lengths[i] = dataset[i].features.rows();
  int global_batch = cfg.minibatch_size * topo.size;
  std::vector<size_t> order = sortagrad_order(lengths, global_batch, epoch, cfg.seed, cfg.sortagrad);

  double lr = cfg.learning_rate / std::pow(cfg.anneal_factor, epoch);
  state.learning_rate = lr;
  state.epoch = epoch;

  EpochStats stats;
  stats.learning_rate = lr;

  for (size_t begin = 0; begin < order.size(); begin += global_batch) {
    size_t batch_n = std::min(order.size() - begin, static_cast<size_t>(global_batch));
    size_t local_begin = begin + std::min(batch_n, static_cast<size_t>(topo.rank) * cfg.minibatch_size);
    size_t local_end = begin + std::min(batch_n, (static_cast<size_t>(topo.rank) + 1) * cfg.minibatch_size);

    nn::Batch inputs;
    std::vector<const LabelSequence*> labels;
    for (size_t i = local_begin; i < local_end; ++i) {
      inputs.push_back(dataset[order[i]].features);
      labels.push_back(&dataset[order[i]].label);
    }

    zero_grads(net);
    double local_loss = 0;
    long local_skipped = 0;
    if (!inputs.empty()) {
      nn::Batch logits = net.forward(inputs, /*train=*/true);
      nn::Batch dlogits(logits.size());
      for (size_t i = 0; i < logits.size(); ++i) {
        auto res = ctc::ctc_loss_reference(logits[i], *labels[i], blank);
        if (!res.feasible) {
          // Too few frames for the label after striding; contributes no
          // gradient.
          dlogits[i] = Matrix(logits[i].rows(), logits[i].cols());
          ++local_skipped;
          continue;
        }
        local_loss += res.loss;
        dlogits[i] = std::move(res.logit_grad);
      }
      net.backward(dlogits);
    }

    nn::ParamVector grad = get_grads(net);
    if (comm != nullptr && topo.size > 1) {
      ring_allreduce(grad, topo, *comm);
      std::vector<real> scalars = {static_cast<real>(local_loss), static_cast<real>(local_skipped)};
      ring_allreduce(scalars, topo, *comm);
      local_loss = scalars[0];
      local_skipped = static_cast<long>(scalars[1]);
    }

    real inv = static_cast<real>(1.0 / static_cast<double>(batch_n));
    for (real& g : grad) g *= inv;
    if (clip_gradient(grad, cfg.clip_threshold)) ++stats.clip_activations;

    nn::ParamVector params = get_params(net);
    nesterov_step(params, grad, state.velocity, lr, cfg.momentum);
    set_params(net, params);

    stats.mean_loss += local_loss;
    stats.skipped += local_skipped;
    ++stats.minibatches;
  }

  size_t counted = order.size() - static_cast<size_t>(stats.skipped);
  stats.mean_loss = counted > 0 ? stats.mean_loss / static_cast<double>(counted) : 0.0;
  stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return stats;
}

double evaluate_mean_loss(nn::Network& net, const Dataset& dataset) {
  ASR_REQUIRE(!dataset.empty(), "evaluate_mean_loss: dataset is empty");
  int blank = net.output_dim() - 1;
  double total = 0;
  long counted = 0;
  for (const auto& utt : dataset) {
    nn::Batch logits = net.forward({utt.features}, /*train=*/false);
    auto res = ctc::ctc_loss_reference(logits[0], utt.label, blank);
    if (!res.feasible) continue;
    total += res.loss;
    ++counted;
  }
  return counted > 0 ? total / counted : std::numeric_limits<double>::infinity();
}

}  // namespace asr::trainer

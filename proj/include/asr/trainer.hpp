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

#ifndef ASR_TRAINER_HPP
#define ASR_TRAINER_HPP

#include <string>
#include <vector>

#include "asr/allreduce.hpp"
#include "asr/features.hpp"
#include "asr/network.hpp"

namespace asr::trainer {

struct TrainConfig {
  double learning_rate = 3e-4;  // initial; the usual sweep range is [1e-4, 6e-4]
  double anneal_factor = 1.2;   // learning rate divided by this after every epoch
  double momentum = 0.99;
  double clip_threshold = 400.0;
  int minibatch_size = 8;  // per worker
  int epochs = 20;
  bool sortagrad = true;
  uint64_t seed = 1;
};

struct OptimizerState {
  nn::ParamVector velocity;
  int epoch = 0;
  double learning_rate = 0;

  void save(const std::string& path) const;
  static OptimizerState load(const std::string& path);
};

struct Utterance {
  Matrix features;
  LabelSequence label;
};
using Dataset = std::vector<Utterance>;

// Utterance visiting order for one epoch, flattened from minibatches of
// `global_batch` utterances. With SortaGrad, epoch 0 visits minibatches in
// increasing order of their longest utterance (stable in the original
// order on ties) and later epochs shuffle the order of those minibatches;
// without it every epoch is an independent seeded shuffle.
std::vector<size_t> sortagrad_order(const std::vector<int>& lengths, int global_batch, int epoch,
                                    uint64_t seed, bool sortagrad_on);

// Rescales to `threshold` when the L2 norm exceeds it. NaN gradients are a
// training bug and throw. Returns whether clipping fired.
bool clip_gradient(nn::ParamVector& grad, double threshold);

// v <- mu*v + g; theta <- theta - lr*(g + mu*v). With mu = 0 this is plain
// SGD; with lr = 0 parameters stay put while the velocity still turns over.
void nesterov_step(nn::ParamVector& params, const nn::ParamVector& grads, nn::ParamVector& velocity,
                   double lr, double momentum);

struct EpochStats {
  double mean_loss = 0;      // per utterance, across all workers
  double wall_seconds = 0;
  double learning_rate = 0;
  long minibatches = 0;
  long clip_activations = 0;  // optimizer steps where clipping fired
  long skipped = 0;           // utterances infeasible for their label
};

// One synchronous-SGD epoch for one worker. The dataset is the global
// dataset; each global minibatch of size minibatch_size * topo.size is
// split contiguously across ranks, local gradients are summed by the ring
// collective, scaled by the global batch size, clipped and applied. With
// comm == nullptr (topo.size == 1) this is plain single-process SGD.
EpochStats train_epoch(nn::Network& net, const Dataset& dataset, const TrainConfig& cfg,
                       OptimizerState& state, int epoch, allreduce::RingTopology topo = {0, 1},
                       allreduce::Transport* comm = nullptr);

// Mean CTC loss over a dataset (inference-mode forward). Used for held-out
// tracking and best-checkpoint retention.
double evaluate_mean_loss(nn::Network& net, const Dataset& dataset);

}  // namespace asr::trainer

#endif  // ASR_TRAINER_HPP

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

#include "asr/ctc.hpp"

#include <algorithm>
#include <barrier>
#include <ostream>
#include <thread>

namespace asr::ctc {

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (int t = 0; t < logits.rows(); ++t) {
    const real* in = logits.row(t);
    real* o = out.row(t);
    real mx = in[0];
    for (int k = 1; k < logits.cols(); ++k) mx = std::max(mx, in[k]);
    real sum = 0;
    for (int k = 0; k < logits.cols(); ++k) sum += std::exp(in[k] - mx);
    real lse = mx + std::log(sum);
    for (int k = 0; k < logits.cols(); ++k) o[k] = in[k] - lse;
  }
  return out;
}

namespace {

bool skip_allowed(const std::vector<int>& aug, int blank, int s) {
  return s >= 2 && aug[s] != blank && aug[s] != aug[s - 2];
}

// Distinct label keys with their lattice rows in ascending order, used by
// the key-grouped gradient reduction.
struct KeyGroups {
  std::vector<int> keys;                   // distinct symbols present in aug
  std::vector<std::vector<int>> rows;      // rows per key, ascending
};

KeyGroups group_rows_by_key(const std::vector<int>& aug) {
  // Key-value sort of (symbol, row); done once per utterance.
  std::vector<std::pair<int, int>> kv(aug.size());
  for (size_t s = 0; s < aug.size(); ++s) kv[s] = {aug[s], static_cast<int>(s)};
  std::sort(kv.begin(), kv.end());
  KeyGroups g;
  for (auto& [key, row] : kv) {
    if (g.keys.empty() || g.keys.back() != key) {
      g.keys.push_back(key);
      g.rows.emplace_back();
    }
    g.rows.back().push_back(row);
  }
  return g;
}

// Gradient row for one time-step from the combined column gamma = alpha+beta.
void grad_column(const Matrix& logprobs, const KeyGroups& groups, real log_prob,
                 const std::vector<real>& gamma, int t, Matrix& grad) {
  const real* lp = logprobs.row(t);
  real* g = grad.row(t);
  for (int k = 0; k < logprobs.cols(); ++k) g[k] = std::exp(lp[k]);
  for (size_t i = 0; i < groups.keys.size(); ++i) {
    real acc = kNegInf;
    for (int s : groups.rows[i]) acc = log_sum_exp_guarded(acc, gamma[s]);
    g[groups.keys[i]] -= std::exp(acc - log_prob);
  }
}

real final_log_prob(const std::vector<real>& last_alpha) {
  int s_count = static_cast<int>(last_alpha.size());
  real lp = kNegInf;
  if (s_count >= 2) lp = log_sum_exp_guarded(lp, last_alpha[s_count - 2]);
  lp = log_sum_exp_guarded(lp, last_alpha[s_count - 1]);
  return lp;
}

}  // namespace

std::vector<int> augment_label(const std::vector<int>& label, int blank) {
  std::vector<int> aug;
  aug.reserve(2 * label.size() + 1);
  aug.push_back(blank);
  for (int c : label) {
    aug.push_back(c);
    aug.push_back(blank);
  }
  return aug;
}

int min_frames(const std::vector<int>& label) {
  int needed = static_cast<int>(label.size());
  for (size_t i = 1; i < label.size(); ++i)
    if (label[i] == label[i - 1]) ++needed;
  return needed;
}

void forward_column(const Matrix& logprobs, const std::vector<int>& aug, int blank,
                    int t, const std::vector<real>& prev, std::vector<real>& out) {
  int s_count = static_cast<int>(aug.size());
  out.resize(s_count);
  const real* lp = logprobs.row(t);
  if (t == 0) {
    for (int s = 0; s < s_count; ++s) out[s] = s < 2 ? lp[aug[s]] : kNegInf;
    return;
  }
  for (int s = 0; s < s_count; ++s) {
    real acc = prev[s];
    if (s >= 1) acc = log_sum_exp_guarded(acc, prev[s - 1]);
    if (skip_allowed(aug, blank, s)) acc = log_sum_exp_guarded(acc, prev[s - 2]);
    out[s] = acc == kNegInf ? kNegInf : acc + lp[aug[s]];
  }
}

void backward_column(const Matrix& logprobs, const std::vector<int>& aug, int blank,
                     int t, const std::vector<real>& next, std::vector<real>& out) {
  int s_count = static_cast<int>(aug.size());
  out.resize(s_count);
  if (t == logprobs.rows() - 1) {
    for (int s = 0; s < s_count; ++s) out[s] = s >= s_count - 2 ? 0 : kNegInf;
    return;
  }
  const real* lp = logprobs.row(t + 1);
  for (int s = 0; s < s_count; ++s) {
    real acc = next[s] == kNegInf ? kNegInf : next[s] + lp[aug[s]];
    if (s + 1 < s_count && next[s + 1] != kNegInf)
      acc = log_sum_exp_guarded(acc, next[s + 1] + lp[aug[s + 1]]);
    if (s + 2 < s_count && skip_allowed(aug, blank, s + 2) && next[s + 2] != kNegInf)
      acc = log_sum_exp_guarded(acc, next[s + 2] + lp[aug[s + 2]]);
    out[s] = acc;
  }
}

CtcLattice ctc_lattice(const Matrix& frame_logprobs, const std::vector<int>& label, int blank) {
  ASR_REQUIRE(frame_logprobs.rows() >= 1, "ctc: need at least one frame");
  Matrix logprobs = log_softmax_rows(frame_logprobs);
  CtcLattice lat;
  lat.augmented_label = augment_label(label, blank);
  int s_count = static_cast<int>(lat.augmented_label.size());
  int frames = logprobs.rows();
  lat.alpha = Matrix(s_count, frames);
  lat.beta = Matrix(s_count, frames);

  std::vector<real> prev, cur;
  for (int t = 0; t < frames; ++t) {
    forward_column(logprobs, lat.augmented_label, blank, t, prev, cur);
    for (int s = 0; s < s_count; ++s) lat.alpha(s, t) = cur[s];
    std::swap(prev, cur);
  }
  lat.log_prob = final_log_prob(prev);

  for (int t = frames - 1; t >= 0; --t) {
    backward_column(logprobs, lat.augmented_label, blank, t, prev, cur);
    for (int s = 0; s < s_count; ++s) lat.beta(s, t) = cur[s];
    std::swap(prev, cur);
  }
  return lat;
}

CtcResult ctc_loss_reference(const Matrix& frame_logits, const std::vector<int>& label, int blank) {
  CtcResult res;
  if (frame_logits.rows() < min_frames(label)) return res;

  Matrix logprobs = log_softmax_rows(frame_logits);
  std::vector<int> aug = augment_label(label, blank);
  int frames = logprobs.rows();
  int s_count = static_cast<int>(aug.size());

  // Full alpha; beta is streamed backwards one column at a time.
  Matrix alpha(s_count, frames);
  std::vector<real> prev, cur;
  for (int t = 0; t < frames; ++t) {
    forward_column(logprobs, aug, blank, t, prev, cur);
    for (int s = 0; s < s_count; ++s) alpha(s, t) = cur[s];
    std::swap(prev, cur);
  }
  real log_prob = final_log_prob(prev);
  if (log_prob == kNegInf) {
    // Structurally feasible but probability zero; report the infinite loss
    // with no usable gradient.
    return res;
  }

  KeyGroups groups = group_rows_by_key(aug);
  res.logit_grad = Matrix(frames, logprobs.cols());
  std::vector<real> beta_next, beta_t, gamma(s_count);
  for (int t = frames - 1; t >= 0; --t) {
    backward_column(logprobs, aug, blank, t, beta_next, beta_t);
    for (int s = 0; s < s_count; ++s) gamma[s] = alpha(s, t) + beta_t[s];
    grad_column(logprobs, groups, log_prob, gamma, t, res.logit_grad);
    std::swap(beta_next, beta_t);
  }
  res.feasible = true;
  res.loss = -log_prob;
  return res;
}

CtcResult ctc_loss_parallel(const Matrix& frame_logits, const std::vector<int>& label, int blank,
                            int workers) {
  ASR_REQUIRE(workers >= 1, "ctc_loss_parallel: workers must be >= 1");
  CtcResult res;
  if (frame_logits.rows() < min_frames(label)) return res;

  Matrix logprobs = log_softmax_rows(frame_logits);
  std::vector<int> aug = augment_label(label, blank);
  int frames = logprobs.rows();
  int s_count = static_cast<int>(aug.size());
  KeyGroups groups = group_rows_by_key(aug);

  int team = std::min(workers, s_count);
  Matrix alpha(s_count, frames);
  std::vector<real> beta_next(s_count), beta_t(s_count), gamma(s_count);
  real log_prob = kNegInf;
  res.logit_grad = Matrix(frames, logprobs.cols());

  // Row ranges per worker; each cell depends only on the previous column,
  // so a column is computed fully in parallel between barriers.
  auto range_of = [&](int w, int n) {
    int chunk = (n + team - 1) / team;
    int lo = std::min(w * chunk, n);
    int hi = std::min(lo + chunk, n);
    return std::pair<int, int>(lo, hi);
  };

  std::barrier sync(team);
  auto body = [&](int w) {
    auto [row_lo, row_hi] = range_of(w, s_count);
    std::vector<real> prev_col(s_count), col(s_count);

    // Forward: every worker keeps its own copy of the previous column to
    // avoid false sharing; column t is published to `alpha` before the
    // barrier releases column t+1.
    for (int t = 0; t < frames; ++t) {
      const real* lp = logprobs.row(t);
      for (int s = row_lo; s < row_hi; ++s) {
        real v;
        if (t == 0) {
          v = s < 2 ? lp[aug[s]] : kNegInf;
        } else {
          real acc = prev_col[s];
          if (s >= 1) acc = log_sum_exp_guarded(acc, prev_col[s - 1]);
          if (skip_allowed(aug, blank, s)) acc = log_sum_exp_guarded(acc, prev_col[s - 2]);
          v = acc == kNegInf ? kNegInf : acc + lp[aug[s]];
        }
        alpha(s, t) = v;
      }
      sync.arrive_and_wait();
      for (int s = 0; s < s_count; ++s) prev_col[s] = alpha(s, t);
      sync.arrive_and_wait();
    }

    if (w == 0) {
      std::vector<real> last(s_count);
      for (int s = 0; s < s_count; ++s) last[s] = alpha(s, frames - 1);
      log_prob = final_log_prob(last);
    }
    sync.arrive_and_wait();
    if (log_prob == kNegInf) return;

    // Backward + gradient: one beta column alive at a time; the combined
    // alpha+beta column feeds a per-key reduction in ascending row order.
    auto [key_lo, key_hi] = range_of(w, static_cast<int>(groups.keys.size()));
    for (int t = frames - 1; t >= 0; --t) {
      for (int s = row_lo; s < row_hi; ++s) {
        real v;
        if (t == frames - 1) {
          v = s >= s_count - 2 ? 0 : kNegInf;
        } else {
          const real* lp = logprobs.row(t + 1);
          real acc = beta_next[s] == kNegInf ? kNegInf : beta_next[s] + lp[aug[s]];
          if (s + 1 < s_count && beta_next[s + 1] != kNegInf)
            acc = log_sum_exp_guarded(acc, beta_next[s + 1] + lp[aug[s + 1]]);
          if (s + 2 < s_count && skip_allowed(aug, blank, s + 2) && beta_next[s + 2] != kNegInf)
            acc = log_sum_exp_guarded(acc, beta_next[s + 2] + lp[aug[s + 2]]);
          v = acc;
        }
        beta_t[s] = v;
        gamma[s] = alpha(s, t) + v;  // plain sum, not the guarded one
      }
      sync.arrive_and_wait();

      const real* lp = logprobs.row(t);
      real* g = res.logit_grad.row(t);
      auto [col_lo, col_hi] = range_of(w, logprobs.cols());
      for (int k = col_lo; k < col_hi; ++k) g[k] = std::exp(lp[k]);
      sync.arrive_and_wait();
      for (int i = key_lo; i < key_hi; ++i) {
        real acc = kNegInf;
        for (int s : groups.rows[i]) acc = log_sum_exp_guarded(acc, gamma[s]);
        g[groups.keys[i]] -= std::exp(acc - log_prob);
      }
      sync.arrive_and_wait();
      for (int s = row_lo; s < row_hi; ++s) beta_next[s] = beta_t[s];
      sync.arrive_and_wait();
    }
  };

  if (team == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(team);
    for (int w = 0; w < team; ++w) threads.emplace_back(body, w);
    for (auto& th : threads) th.join();
  }

  if (log_prob == kNegInf) {
    res.logit_grad = Matrix();
    return res;
  }
  res.feasible = true;
  res.loss = -log_prob;
  return res;
}

std::vector<int> viterbi_align(const Matrix& frame_logprobs, const std::vector<int>& label, int blank) {
  ASR_REQUIRE(frame_logprobs.rows() >= min_frames(label), "viterbi_align: label infeasible for frame count");
  Matrix logprobs = log_softmax_rows(frame_logprobs);
  std::vector<int> aug = augment_label(label, blank);
  int frames = logprobs.rows();
  int s_count = static_cast<int>(aug.size());

  Matrix score(s_count, frames, kNegInf);
  // Backpointers; -1 marks a start cell. On ties the largest predecessor
  // row wins, i.e. staying beats advancing by one beats the skip.
  std::vector<std::vector<int>> from(s_count, std::vector<int>(frames, -1));

  for (int s = 0; s < std::min(2, s_count); ++s) score(s, 0) = logprobs(0, aug[s]);
  for (int t = 1; t < frames; ++t) {
    const real* lp = logprobs.row(t);
    for (int s = 0; s < s_count; ++s) {
      real best = score(s, t - 1);
      int pred = s;
      if (s >= 1 && score(s - 1, t - 1) > best) {
        best = score(s - 1, t - 1);
        pred = s - 1;
      }
      if (skip_allowed(aug, blank, s) && score(s - 2, t - 1) > best) {
        best = score(s - 2, t - 1);
        pred = s - 2;
      }
      if (best == kNegInf) continue;
      score(s, t) = best + lp[aug[s]];
      from[s][t] = pred;
    }
  }

  int end = s_count - 1;
  if (s_count >= 2 && score(s_count - 2, frames - 1) > score(end, frames - 1)) end = s_count - 2;
  ASR_REQUIRE(score(end, frames - 1) != kNegInf, "viterbi_align: no feasible path (zero-probability frames)");

  std::vector<int> alignment(frames);
  int s = end;
  for (int t = frames - 1; t >= 0; --t) {
    alignment[t] = aug[s];
    s = from[s][t];
  }
  return alignment;
}

void dump_lattice_tsv(const CtcLattice& lat, std::ostream& os) {
  auto dump = [&](const char* name, const Matrix& m) {
    os << "# " << name << " (" << m.rows() << " x " << m.cols() << ")\n";
    for (int s = 0; s < m.rows(); ++s) {
      os << lat.augmented_label[s];
      for (int t = 0; t < m.cols(); ++t) os << '\t' << m(s, t);
      os << '\n';
    }
  };
  dump("alpha", lat.alpha);
  dump("beta", lat.beta);
}

}  // namespace asr::ctc

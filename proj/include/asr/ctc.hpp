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

#ifndef ASR_CTC_HPP
#define ASR_CTC_HPP

#include <iosfwd>
#include <vector>

#include "asr/common.hpp"

namespace asr::ctc {

// log(e^a + e^b), computed stably. Inputs of -inf are discarded: if one
// operand is -inf the other is returned unchanged, and (-inf, -inf) gives
// -inf. This is the summation every lattice computation below routes
// through; the cancellation behavior of the column-parallel path depends
// on the discard rule.
inline real log_sum_exp_guarded(real a, real b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

// Row-wise log-softmax with max subtraction. Applied by every entry point
// below, so callers may pass unnormalized logits or ready log
// probabilities interchangeably.
Matrix log_softmax_rows(const Matrix& logits);

// Label with blanks interleaved: [blank, l1, blank, l2, ..., lL, blank].
// 2L+1 rows.
std::vector<int> augment_label(const std::vector<int>& label, int blank);

// Minimum number of frames that can carry the label: L plus one separating
// blank per adjacent repeated pair.
int min_frames(const std::vector<int>& label);

// Full S x T forward/backward lattices in log space. `beta` excludes the
// emission at its own time-step, so alpha(s,t) + beta(s,t) is the log
// probability mass of all complete paths through (s,t). Every cell of
// every column is computed; cells off any complete path hold either -inf
// or a finite value that the alpha+beta combine turns into -inf.
struct CtcLattice {
  std::vector<int> augmented_label;
  Matrix alpha;  // S x T
  Matrix beta;   // S x T
  real log_prob = kNegInf;  // log p(label | input)
};

struct CtcResult {
  bool feasible = false;
  real loss = std::numeric_limits<real>::infinity();
  Matrix logit_grad;  // T x (A+1); empty when infeasible
};

// One step of the forward recurrence: fills column t of alpha from column
// t-1 (prev). Only column t-1 is consulted, so callers may stream columns.
// For t == 0, prev is ignored.
void forward_column(const Matrix& logprobs, const std::vector<int>& aug, int blank,
                    int t, const std::vector<real>& prev, std::vector<real>& out);

// One step of the backward recurrence for emission-exclusive beta: fills
// column t from column t+1. For t == T-1, next is ignored.
void backward_column(const Matrix& logprobs, const std::vector<int>& aug, int blank,
                     int t, const std::vector<real>& next, std::vector<real>& out);

// Computes both lattices for inspection and tests. `frame_logprobs` is
// T x (A+1); rows are normalized internally with a log-softmax, which is a
// no-op on already-normalized rows.
CtcLattice ctc_lattice(const Matrix& frame_logprobs, const std::vector<int>& label, int blank);

// Loss and gradient with respect to pre-softmax logits (softmax fused).
// Infeasible labels (too long for T) yield feasible=false, loss=+inf and
// an empty gradient rather than an exception.
CtcResult ctc_loss_reference(const Matrix& frame_logits, const std::vector<int>& label, int blank);

// Column-parallel variant: a worker team computes all S cells of each
// column concurrently with a barrier between columns, then reduces the
// per-character gradient by grouping lattice rows on their label key in
// ascending row order. Bitwise identical to the reference for any worker
// count.
CtcResult ctc_loss_parallel(const Matrix& frame_logits, const std::vector<int>& label, int blank,
                            int workers);

// Highest-probability alignment whose collapse equals the label. Ties
// prefer staying in the current lattice row over advancing, and the
// terminal blank row at the final frame; this makes the result the
// reversed-lexicographically-largest row sequence among maximizers.
// Throws if the label is infeasible for T.
std::vector<int> viterbi_align(const Matrix& frame_logprobs, const std::vector<int>& label, int blank);

// Tab-separated dump of both lattices for debugging.
void dump_lattice_tsv(const CtcLattice& lat, std::ostream& os);

}  // namespace asr::ctc

#endif  // ASR_CTC_HPP

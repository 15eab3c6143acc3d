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

#ifndef ASR_DECODER_HPP
#define ASR_DECODER_HPP

#include <vector>

#include "asr/features.hpp"
#include "asr/lm.hpp"

namespace asr::decoder {

struct DecoderConfig {
  double alpha = 0.0;      // language model weight
  double beta = 0.0;       // insertion bonus per completed word (or character)
  int beam_width = 500;    // 200 is the usual character-mode setting
  double prune_p = 1.0;    // per-frame cumulative probability cutoff
  int max_symbols = 0;     // cap on candidates per frame; 0 means no cap
  bool char_mode = false;  // query the LM per character instead of per word
};

// Per-frame argmax, collapse repeats, drop blanks.
LabelSequence greedy_decode(const Matrix& frame_probs, int blank);

// Smallest probability-sorted candidate set reaching cumulative prune_p,
// capped at max_symbols (0 = unlimited); the blank is always included.
// Returned ids are sorted by descending probability.
std::vector<int> prune_candidates(const real* dist, int n_symbols, double prune_p, int max_symbols,
                                  int blank);

struct BeamSearchResult {
  LabelSequence labels;
  double q_score = 0;          // log p_ctc + alpha * log p_lm + beta * count
  double log_p_ctc = 0;
  long candidate_evaluations = 0;  // sum of per-frame candidate set sizes
};

// Prefix beam search over per-frame distributions with shallow LM fusion.
// Identical prefixes reached along different alignments merge by guarded
// log-space summation. Score ties break toward the shorter prefix, then
// lexicographically. `lm` may be null (the alpha = 0 path).
BeamSearchResult beam_search(const Matrix& frame_probs, const Alphabet& alphabet,
                             const lm::NGramModel* lm, const DecoderConfig& cfg);

}  // namespace asr::decoder

#endif  // ASR_DECODER_HPP

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

#include "asr/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "asr/ctc.hpp"

namespace asr::decoder {

using ctc::log_sum_exp_guarded;

LabelSequence greedy_decode(const Matrix& frame_probs, int blank) {
  LabelSequence out;
  int prev = blank;
  for (int t = 0; t < frame_probs.rows(); ++t) {
    const real* row = frame_probs.row(t);
    int best = 0;
    for (int k = 1; k < frame_probs.cols(); ++k)
      if (row[k] > row[best]) best = k;
    if (best != blank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

std::vector<int> prune_candidates(const real* dist, int n_symbols, double prune_p, int max_symbols,
                                  int blank) {
  ASR_REQUIRE(prune_p > 0 && prune_p <= 1, "prune_candidates: prune_p must be in (0, 1]");
  std::vector<int> order(n_symbols);
  for (int k = 0; k < n_symbols; ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist[a] > dist[b]; });

  std::vector<int> picked;
  double mass = 0;
  bool have_blank = false;
  for (int k : order) {
    if (mass >= prune_p) break;
    if (max_symbols > 0 && static_cast<int>(picked.size()) >= max_symbols) break;
    picked.push_back(k);
    have_blank = have_blank || k == blank;
    mass += dist[k];
  }
  if (!have_blank) picked.push_back(blank);
  return picked;
}

namespace {

struct Hypothesis {
  double p_blank = kNegInf;     // log prob of alignments ending in blank
  double p_nonblank = kNegInf;  // log prob of alignments ending in the last symbol
  double lm_logp = 0;           // sum of LM log probs of completed tokens
  double count = 0;             // completed words (or characters)
  lm::NGramModel::State lm_state;
  std::string partial_word;  // word mode: symbols since the last space
  bool lm_ready = false;     // lm fields computed for this prefix

  double log_p_total() const { return log_sum_exp_guarded(p_blank, p_nonblank); }
};

struct ScoredRef {
  const LabelSequence* prefix;
  double q;
};

bool better(const ScoredRef& a, const ScoredRef& b) {
  if (a.q != b.q) return a.q > b.q;
  if (a.prefix->size() != b.prefix->size()) return a.prefix->size() < b.prefix->size();
  return *a.prefix < *b.prefix;
}

}  // namespace

BeamSearchResult beam_search(const Matrix& frame_probs, const Alphabet& alphabet,
                             const lm::NGramModel* lm, const DecoderConfig& cfg) {
  ASR_REQUIRE(cfg.beam_width >= 1, "beam_search: beam_width must be >= 1");
  ASR_REQUIRE(frame_probs.cols() == alphabet.size() + 1,
              "beam_search: distribution width must be alphabet size + 1");
  int blank = alphabet.blank();
  bool use_lm = lm != nullptr && cfg.alpha != 0;

  std::map<LabelSequence, Hypothesis> beam;
  {
    Hypothesis root;
    root.p_blank = 0;  // log 1
    if (use_lm) root.lm_state = lm->begin_state();
    root.lm_ready = true;
    beam.emplace(LabelSequence{}, std::move(root));
  }

  BeamSearchResult result;

  // Extends the LM bookkeeping of `parent` by symbol c. Word mode scores a
  // token when the space closes a word; character mode scores per symbol.
  auto extend_lm = [&](const Hypothesis& parent, int c, Hypothesis& child) {
    child.lm_logp = parent.lm_logp;
    child.count = parent.count;
    child.lm_state = parent.lm_state;
    child.partial_word = parent.partial_word;
    if (!use_lm) {
      // The insertion bonus still applies without a model.
      if (cfg.char_mode) {
        child.count += 1;
      } else if (c == alphabet.space_id() && !child.partial_word.empty()) {
        child.count += 1;
        child.partial_word.clear();
      } else if (c != alphabet.space_id()) {
        child.partial_word += alphabet.symbol(c);
      }
      child.lm_ready = true;
      return;
    }
    if (cfg.char_mode) {
      child.lm_logp += lm->score_token(child.lm_state, alphabet.symbol(c));
      child.count += 1;
    } else if (c == alphabet.space_id()) {
      if (!child.partial_word.empty()) {
        child.lm_logp += lm->score_token(child.lm_state, child.partial_word);
        child.count += 1;
        child.partial_word.clear();
      }
    } else {
      child.partial_word += alphabet.symbol(c);
    }
    child.lm_ready = true;
  };

  auto q_of = [&](const LabelSequence&, const Hypothesis& h) {
    return h.log_p_total() + cfg.alpha * h.lm_logp + cfg.beta * h.count;
  };

  std::vector<int> candidates;
  LabelSequence extended;
  for (int t = 0; t < frame_probs.rows(); ++t) {
    const real* dist = frame_probs.row(t);
    candidates = prune_candidates(dist, frame_probs.cols(), cfg.prune_p, cfg.max_symbols, blank);
    result.candidate_evaluations += static_cast<long>(candidates.size());

    std::map<LabelSequence, Hypothesis> next;
    for (const auto& [prefix, hyp] : beam) {
      double p_total = hyp.log_p_total();
      for (int c : candidates) {
        double lp = dist[c] <= 0 ? kNegInf : std::log(static_cast<double>(dist[c]));
        if (c == blank) {
          Hypothesis& same = next[prefix];
          if (!same.lm_ready) {
            same.lm_logp = hyp.lm_logp;
            same.count = hyp.count;
            same.lm_state = hyp.lm_state;
            same.partial_word = hyp.partial_word;
            same.lm_ready = true;
          }
          same.p_blank = log_sum_exp_guarded(same.p_blank, p_total + lp);
          continue;
        }
        bool repeat = !prefix.empty() && prefix.back() == c;
        if (repeat) {
          // Same symbol again without a separating blank collapses.
          Hypothesis& same = next[prefix];
          if (!same.lm_ready) {
            same.lm_logp = hyp.lm_logp;
            same.count = hyp.count;
            same.lm_state = hyp.lm_state;
            same.partial_word = hyp.partial_word;
            same.lm_ready = true;
          }
          same.p_nonblank = log_sum_exp_guarded(same.p_nonblank, hyp.p_nonblank + lp);
        }
        extended = prefix;
        extended.push_back(c);
        Hypothesis& ext = next[extended];
        if (!ext.lm_ready) extend_lm(hyp, c, ext);
        // A repeated symbol may only extend out of an explicit blank.
        double src = repeat ? hyp.p_blank : p_total;
        if (src != kNegInf) ext.p_nonblank = log_sum_exp_guarded(ext.p_nonblank, src + lp);
      }
    }

    // Keep the beam_width best by Q; ties prefer shorter, then
    // lexicographically smaller prefixes.
    std::vector<ScoredRef> scored;
    scored.reserve(next.size());
    for (const auto& [prefix, hyp] : next) {
      if (hyp.p_blank == kNegInf && hyp.p_nonblank == kNegInf) continue;
      scored.push_back({&prefix, q_of(prefix, hyp)});
    }
    std::sort(scored.begin(), scored.end(), better);
    if (static_cast<int>(scored.size()) > cfg.beam_width) scored.resize(cfg.beam_width);

    std::map<LabelSequence, Hypothesis> pruned;
    for (const auto& ref : scored) pruned.emplace(*ref.prefix, std::move(next[*ref.prefix]));
    beam = std::move(pruned);
  }

  ASR_REQUIRE(!beam.empty(), "beam_search: empty beam (all-zero distributions?)");
  const LabelSequence* best_prefix = nullptr;
  double best_q = 0, best_ctc = 0;
  for (const auto& [prefix, hyp] : beam) {
    ScoredRef cur{&prefix, q_of(prefix, hyp)};
    if (best_prefix == nullptr || better(cur, {best_prefix, best_q})) {
      best_prefix = &prefix;
      best_q = cur.q;
      best_ctc = hyp.log_p_total();
    }
  }
  result.labels = *best_prefix;
  result.q_score = best_q;
  result.log_p_ctc = best_ctc;
  return result;
}

}  // namespace asr::decoder

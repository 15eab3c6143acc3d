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

#ifndef ASR_LM_HPP
#define ASR_LM_HPP

#include <map>
#include <string>
#include <vector>

#include "asr/common.hpp"

namespace asr::lm {

using Token = std::string;
using TokenSeq = std::vector<Token>;

struct NGramConfig {
  int order = 5;
  double discount = 0.75;       // absolute discount D
  long min_count_prune = 1;     // n-grams (order >= 2) with count below this are dropped
  double unknown_logprob = -20.0;  // natural-log floor for out-of-vocabulary tokens
};

// Count-based n-gram model with interpolated Kneser-Ney smoothing, stored
// in backoff form: seen n-grams carry their interpolated probability, each
// context carries one backoff weight, and the lookup recurses to shorter
// contexts. Probabilities are natural logs. Immutable after training.
class NGramModel {
 public:
  static NGramModel train(const std::vector<TokenSeq>& corpus, const NGramConfig& cfg);

  int order() const { return order_; }
  const std::vector<Token>& vocabulary() const { return vocab_; }
  double unknown_logprob() const { return unknown_logprob_; }

  // log p(token | context); context may be any length, the last order-1
  // tokens are used. Out-of-vocabulary tokens get the configured floor.
  double token_logprob(const TokenSeq& context, const Token& token) const;

  // Sum of conditional log probabilities with sentence-start padding.
  double score(const TokenSeq& seq) const;

  // Incremental scoring for decoders: the state is the trailing context.
  struct State {
    std::vector<int> ids;  // most recent order-1 token ids, -1 marks OOV
  };
  State begin_state() const;
  double score_token(State& state, const Token& token) const;

  // Sorted ARPA-style text sections with natural-log values printed at
  // full precision, so save/load round trips are bit exact.
  void save(const std::string& path) const;
  static NGramModel load(const std::string& path);

 private:
  using Context = std::vector<int>;

  int token_id(const Token& t) const;  // -1 when unknown
  double lookup(const int* ctx, int ctx_len, int word) const;

  int order_ = 0;
  double unknown_logprob_ = -20.0;
  std::vector<Token> vocab_;  // id -> token; id 0 is the sentence start
  std::map<Token, int> ids_;
  // probs_[k]: contexts of length k -> {word -> log prob}; bows_[k]:
  // contexts of length k -> log backoff weight.
  std::vector<std::map<Context, std::map<int, double>>> probs_;
  std::vector<std::map<Context, double>> bows_;
};

// Tokenizers for the two model flavors: words split on spaces, characters
// take every UTF-8 grapheme (spaces included) as a token.
TokenSeq tokenize_words(const std::string& line);
TokenSeq tokenize_chars(const std::string& line);

}  // namespace asr::lm

#endif  // ASR_LM_HPP

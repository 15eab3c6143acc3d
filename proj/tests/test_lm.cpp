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

#include "asr/lm.hpp"

using namespace asr;
using namespace asr::lm;

namespace {

std::vector<TokenSeq> lines_to_corpus(const std::vector<std::string>& lines) {
  std::vector<TokenSeq> corpus;
  for (const auto& l : lines) corpus.push_back(tokenize_words(l));
  return corpus;
}

// Sum of p(w|context) over the whole vocabulary (skipping <s>).
double context_mass(const NGramModel& m, const TokenSeq& context) {
  double sum = 0;
  for (const auto& w : m.vocabulary()) {
    if (w == "<s>") continue;
    sum += std::exp(m.token_logprob(context, w));
  }
  return sum;
}

}  // namespace

TEST_CASE("order-1 model uses raw relative frequency") {
  NGramConfig cfg;
  cfg.order = 1;
  auto m = NGramModel::train(lines_to_corpus({"a a b"}), cfg);
  CHECK(std::exp(m.token_logprob({}, "a")) == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(std::exp(m.token_logprob({}, "b")) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("hand-computed interpolated Kneser-Ney values, order 2") {
  NGramConfig cfg;
  cfg.order = 2;
  cfg.discount = 0.75;
  auto m = NGramModel::train(lines_to_corpus({"a b", "a b", "b a", "a a", "b b"}), cfg);

  // Continuation counts: a after {<s>, b, a} = 3, b after {<s>, a, b} = 3.
  CHECK(std::exp(m.token_logprob({}, "a")) == doctest::Approx(0.5).epsilon(1e-12));

  // Context "a": counts {b: 2, a: 1}; total 3, 2 types, lambda = 0.5.
  double p_b_a = (2 - 0.75) / 3.0 + 0.5 * 0.5;
  double p_a_a = (1 - 0.75) / 3.0 + 0.5 * 0.5;
  CHECK(std::exp(m.token_logprob({"a"}, "b")) == doctest::Approx(p_b_a).epsilon(1e-12));
  CHECK(std::exp(m.token_logprob({"a"}, "a")) == doctest::Approx(p_a_a).epsilon(1e-12));

  // Context <s>: counts {a: 3, b: 2}; total 5, lambda = 0.3.
  double p_a_s = (3 - 0.75) / 5.0 + 0.3 * 0.5;
  CHECK(m.score({"a", "b"}) == doctest::Approx(std::log(p_a_s) + std::log(p_b_a)).epsilon(1e-12));
}

TEST_CASE("per-context distributions sum to one") {
  NGramConfig cfg;
  cfg.order = 3;
  auto corpus = lines_to_corpus({"the cat sat on the mat", "the dog sat", "a cat and a dog",
                                 "the mat sat on the cat", "dogs and cats sat"});
  auto m = NGramModel::train(corpus, cfg);
  std::vector<TokenSeq> contexts = {{}, {"the"}, {"cat"}, {"sat"}, {"the", "cat"}, {"on", "the"},
                                    {"<s>"}, {"<s>", "the"}, {"and", "a"}, {"dog"}};
  for (const auto& ctx : contexts) CHECK(context_mass(m, ctx) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("normalization holds across fuzzed corpora and orders") {
  Rng rng(404);
  for (int trial = 0; trial < 10; ++trial) {
    int order = 1 + static_cast<int>(rng.below(4));
    std::vector<TokenSeq> corpus;
    int sentences = 3 + static_cast<int>(rng.below(8));
    for (int s = 0; s < sentences; ++s) {
      TokenSeq sent;
      int len = 1 + static_cast<int>(rng.below(8));
      for (int i = 0; i < len; ++i) sent.push_back(std::string(1, static_cast<char>('a' + rng.below(4))));
      corpus.push_back(sent);
    }
    NGramConfig cfg;
    cfg.order = order;
    auto m = NGramModel::train(corpus, cfg);

    // A handful of contexts, seen and unseen.
    std::vector<TokenSeq> contexts = {{}, {"a"}, {"b", "a"}, {"c"}, {"d", "c"}, {"a", "a"}};
    for (const auto& ctx : contexts) CHECK(context_mass(m, ctx) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("unseen in-vocabulary bigram gets positive probability") {
  NGramConfig cfg;
  cfg.order = 2;
  auto m = NGramModel::train(lines_to_corpus({"a b", "b c", "c a"}), cfg);
  // "a c" never occurs.
  double lp = m.token_logprob({"a"}, "c");
  CHECK(std::isfinite(lp));
  CHECK(std::exp(lp) > 0);
  CHECK(std::exp(lp) < 1);
}

TEST_CASE("empty sequence scores zero and scoring is incremental") {
  NGramConfig cfg;
  cfg.order = 3;
  auto m = NGramModel::train(lines_to_corpus({"a b c", "b c a", "c a b"}), cfg);
  CHECK(m.score({}) == 0.0);

  TokenSeq seq = {"a", "b", "c", "a", "c"};
  double whole = m.score(seq);
  auto state = m.begin_state();
  double incremental = 0;
  for (const auto& tok : seq) incremental += m.score_token(state, tok);
  CHECK(incremental == doctest::Approx(whole).epsilon(1e-12));
}

TEST_CASE("unknown tokens get the configured floor") {
  NGramConfig cfg;
  cfg.order = 2;
  cfg.unknown_logprob = -13.5;
  auto m = NGramModel::train(lines_to_corpus({"a b"}), cfg);
  CHECK(m.token_logprob({"a"}, "zzz") == doctest::Approx(-13.5));
  // Scoring continues past an OOV token.
  double s = m.score({"a", "zzz", "b"});
  CHECK(std::isfinite(s));
}

TEST_CASE("adding occurrences of an n-gram never decreases its probability") {
  Rng rng(77);
  std::vector<std::string> base = {"a b c", "b a", "c c b", "a c"};
  NGramConfig cfg;
  cfg.order = 2;
  double prev = -1;
  std::vector<std::string> lines = base;
  for (int extra = 0; extra < 6; ++extra) {
    auto m = NGramModel::train(lines_to_corpus(lines), cfg);
    double p = std::exp(m.token_logprob({"a"}, "b"));
    if (prev >= 0) CHECK(p >= prev - 1e-12);
    prev = p;
    lines.push_back("a b");
  }
}

TEST_CASE("pruning drops rare n-grams but keeps normalization") {
  NGramConfig cfg;
  cfg.order = 2;
  cfg.min_count_prune = 2;
  auto m = NGramModel::train(lines_to_corpus({"a b", "a b", "a c", "b a", "b a"}), cfg);
  // "a c" (count 1) was pruned: its probability now comes purely through
  // the backoff and must be smaller than the retained "a b".
  double p_ab = std::exp(m.token_logprob({"a"}, "b"));
  double p_ac = std::exp(m.token_logprob({"a"}, "c"));
  CHECK(p_ac > 0);
  CHECK(p_ac < p_ab);
  CHECK(context_mass(m, {"a"}) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("serialization round trip is bit exact") {
  NGramConfig cfg;
  cfg.order = 3;
  auto m = NGramModel::train(lines_to_corpus({"the cat sat", "the dog sat", "a cat ran"}), cfg);
  auto dir = std::filesystem::temp_directory_path();
  auto p1 = (dir / "asr_lm_a.arpa").string();
  auto p2 = (dir / "asr_lm_b.arpa").string();
  m.save(p1);
  auto back = NGramModel::load(p1);
  back.save(p2);

  std::ifstream f1(p1), f2(p2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);

  // Scores agree bitwise as well.
  TokenSeq seq = {"the", "cat", "ran"};
  CHECK(m.score(seq) == back.score(seq));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("character tokenizer splits graphemes") {
  auto toks = tokenize_chars("ab c");
  REQUIRE(toks.size() == 4);
  CHECK(toks[0] == "a");
  CHECK(toks[2] == " ");
  NGramConfig cfg;
  cfg.order = 3;
  auto m = NGramModel::train({tokenize_chars("hello"), tokenize_chars("help")}, cfg);
  CHECK(std::exp(m.token_logprob({"h", "e"}, "l")) > 0.5);
}

TEST_CASE("invalid configuration is rejected") {
  NGramConfig cfg;
  cfg.order = 0;
  CHECK_THROWS(NGramModel::train({{"a"}}, cfg));
  NGramConfig cfg2;
  CHECK_THROWS(NGramModel::train({}, cfg2));
}

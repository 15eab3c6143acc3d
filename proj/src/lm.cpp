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

#include "asr/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "asr/features.hpp"

namespace asr::lm {

namespace {

constexpr int kStartId = 0;
const char* kStartToken = "<s>";

std::string format_full(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

TokenSeq tokenize_words(const std::string& line) {
  TokenSeq out;
  std::istringstream is(line);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

TokenSeq tokenize_chars(const std::string& line) {
  return utf8_graphemes(line);
}

int NGramModel::token_id(const Token& t) const {
  auto it = ids_.find(t);
  return it == ids_.end() ? -1 : it->second;
}

NGramModel NGramModel::train(const std::vector<TokenSeq>& corpus, const NGramConfig& cfg) {
  ASR_REQUIRE(cfg.order >= 1, "lm: order must be >= 1");
  ASR_REQUIRE(cfg.discount > 0 && cfg.discount < 1, "lm: discount must be in (0,1)");
  ASR_REQUIRE(!corpus.empty(), "lm: corpus is empty");

  NGramModel model;
  model.order_ = cfg.order;
  model.unknown_logprob_ = cfg.unknown_logprob;
  model.vocab_.push_back(kStartToken);
  model.ids_[kStartToken] = kStartId;
  for (const auto& sent : corpus)
    for (const auto& tok : sent) {
      ASR_REQUIRE(tok != kStartToken, "lm: corpus may not contain the reserved <s> token");
      if (!model.ids_.count(tok)) {
        model.ids_[tok] = static_cast<int>(model.vocab_.size());
        model.vocab_.push_back(tok);
      }
    }

  int n = cfg.order;
  // Raw counts at the top order over <s>-padded sentences.
  std::vector<std::map<Context, std::map<int, long>>> counts(n + 1);
  for (const auto& sent : corpus) {
    if (sent.empty()) continue;
    std::vector<int> padded(n - 1, kStartId);
    for (const auto& tok : sent) padded.push_back(model.ids_.at(tok));
    for (size_t i = n - 1; i < padded.size(); ++i) {
      Context ctx(padded.begin() + (i - (n - 1)), padded.begin() + i);
      ++counts[n][ctx][padded[i]];
    }
  }

  // Lower orders use continuation counts (the number of distinct preceding
  // types), except histories beginning with <s>, which nothing precedes;
  // those keep raw counts accumulated alongside.
  for (int k = n; k >= 2; --k) {
    for (const auto& [ctx, words] : counts[k]) {
      Context shorter(ctx.begin() + 1, ctx.end());
      bool sentence_initial = !shorter.empty() && shorter.front() == kStartId;
      for (const auto& [w, c] : words) {
        long& cell = counts[k - 1][shorter][w];
        if (sentence_initial) {
          cell += c;  // raw counts: nothing can precede an <s>-initial history
        } else {
          cell += 1;  // one per distinct predecessor type
        }
      }
    }
  }

  // Prune low-count n-grams (order >= 2) before estimation; the mass they
  // carried flows through the backoff weights.
  if (cfg.min_count_prune > 1) {
    for (int k = 2; k <= n; ++k) {
      for (auto ctx_it = counts[k].begin(); ctx_it != counts[k].end();) {
        auto& words = ctx_it->second;
        for (auto it = words.begin(); it != words.end();) {
          if (it->second < cfg.min_count_prune) {
            it = words.erase(it);
          } else {
            ++it;
          }
        }
        ctx_it = words.empty() ? counts[k].erase(ctx_it) : std::next(ctx_it);
      }
    }
  }

  model.probs_.assign(n, {});
  model.bows_.assign(n, {});

  // Unigrams: raw relative frequency at order 1 (no discounting at the top
  // level); for higher orders counts[1] holds continuation counts.
  {
    long total = 0;
    for (const auto& [ctx, words] : counts[1])
      for (const auto& [w, c] : words) total += c;
    ASR_REQUIRE(total > 0, "lm: no counts at the unigram level");
    for (const auto& [w, c] : counts[1].begin()->second)
      model.probs_[0][{}][w] = std::log(static_cast<double>(c) / total);
  }

  // Higher orders: interpolated Kneser-Ney with one fixed discount. The
  // interpolation weight doubles as the context's backoff weight.
  for (int k = 2; k <= n; ++k) {
    for (const auto& [ctx, words] : counts[k]) {
      long total = 0;
      for (const auto& [w, c] : words) total += c;
      int types = static_cast<int>(words.size());
      double lambda = cfg.discount * types / total;
      for (const auto& [w, c] : words) {
        Context shorter(ctx.begin() + 1, ctx.end());
        double lower = std::exp(model.lookup(shorter.data(), static_cast<int>(shorter.size()), w));
        double p = std::max(c - cfg.discount, 0.0) / total + lambda * lower;
        model.probs_[k - 1][ctx][w] = std::log(p);
      }
      model.bows_[k - 1][ctx] = std::log(lambda);
    }
  }
  return model;
}

double NGramModel::lookup(const int* ctx, int ctx_len, int word) const {
  if (word < 0) return unknown_logprob_;
  const auto& table = probs_[ctx_len];
  auto ctx_it = table.find(Context(ctx, ctx + ctx_len));
  if (ctx_it != table.end()) {
    auto w_it = ctx_it->second.find(word);
    if (w_it != ctx_it->second.end()) return w_it->second;
  }
  if (ctx_len == 0) {
    // An in-vocabulary word absent from the unigram table can only be <s>.
    return unknown_logprob_;
  }
  double bow = 0.0;
  auto bow_it = bows_[ctx_len].find(Context(ctx, ctx + ctx_len));
  if (bow_it != bows_[ctx_len].end()) bow = bow_it->second;
  return bow + lookup(ctx + 1, ctx_len - 1, word);
}

double NGramModel::token_logprob(const TokenSeq& context, const Token& token) const {
  std::vector<int> ids;
  size_t use = std::min(context.size(), static_cast<size_t>(order_ - 1));
  for (size_t i = context.size() - use; i < context.size(); ++i) ids.push_back(token_id(context[i]));
  // Truncate the context at the most recent OOV: unseen ids never match.
  for (size_t i = ids.size(); i-- > 0;)
    if (ids[i] < 0) {
      ids.erase(ids.begin(), ids.begin() + i + 1);
      break;
    }
  return lookup(ids.data(), static_cast<int>(ids.size()), token_id(token));
}

double NGramModel::score(const TokenSeq& seq) const {
  State state = begin_state();
  double total = 0;
  for (const auto& tok : seq) total += score_token(state, tok);
  return total;
}

NGramModel::State NGramModel::begin_state() const {
  State s;
  s.ids.assign(order_ - 1, kStartId);
  return s;
}

double NGramModel::score_token(State& state, const Token& token) const {
  // Drop everything up to the most recent OOV marker for the lookup.
  std::vector<int> ctx = state.ids;
  for (size_t i = ctx.size(); i-- > 0;)
    if (ctx[i] < 0) {
      ctx.erase(ctx.begin(), ctx.begin() + i + 1);
      break;
    }
  int id = token_id(token);
  double lp = lookup(ctx.data(), static_cast<int>(ctx.size()), id);
  if (order_ > 1) {
    state.ids.push_back(id);
    if (static_cast<int>(state.ids.size()) > order_ - 1)
      state.ids.erase(state.ids.begin(), state.ids.end() - (order_ - 1));
  }
  return lp;
}

void NGramModel::save(const std::string& path) const {
  std::ofstream os(path);
  ASR_REQUIRE(os.good(), "lm: cannot open " + path);
  os << "# natural-log ARPA-style n-gram sections\n";
  os << "unk\t" << format_full(unknown_logprob_) << "\n";
  os << "\\data\\\n";
  for (int k = 1; k <= order_; ++k) {
    size_t count = 0;
    for (const auto& [ctx, words] : probs_[k - 1]) count += words.size();
    os << "ngram " << k << "=" << count << "\n";
  }
  for (int k = 1; k <= order_; ++k) {
    os << "\\" << k << "-grams:\n";
    for (const auto& [ctx, words] : probs_[k - 1]) {
      for (const auto& [w, lp] : words) {
        os << format_full(lp);
        for (int id : ctx) os << '\t' << vocab_[id];
        os << '\t' << vocab_[w];
        if (k < order_) {
          // A backoff weight rides with the n-gram whose tokens form the
          // (k+1)-gram context, as in ARPA files.
          Context full(ctx);
          full.push_back(w);
          auto it = bows_[k].find(full);
          if (it != bows_[k].end()) os << "\t<bow>\t" << format_full(it->second);
        }
        os << '\n';
      }
    }
  }
  os << "\\end\\\n";
}

NGramModel NGramModel::load(const std::string& path) {
  std::ifstream is(path);
  ASR_REQUIRE(is.good(), "lm: cannot open " + path);
  NGramModel model;
  model.vocab_.push_back(kStartToken);
  model.ids_[kStartToken] = kStartId;

  auto intern = [&](const std::string& tok) {
    auto it = model.ids_.find(tok);
    if (it != model.ids_.end()) return it->second;
    model.ids_[tok] = static_cast<int>(model.vocab_.size());
    model.vocab_.push_back(tok);
    return static_cast<int>(model.vocab_.size()) - 1;
  };

  std::string line;
  int current_order = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("unk\t", 0) == 0) {
      model.unknown_logprob_ = std::stod(line.substr(4));
      continue;
    }
    if (line == "\\data\\" || line == "\\end\\") continue;
    if (line.rfind("ngram ", 0) == 0) {
      int k = std::stoi(line.substr(6, line.find('=') - 6));
      model.order_ = std::max(model.order_, k);
      continue;
    }
    if (line[0] == '\\') {
      current_order = std::stoi(line.substr(1, line.find('-') - 1));
      if (static_cast<int>(model.probs_.size()) < current_order) {
        model.probs_.resize(model.order_);
        model.bows_.resize(model.order_);
      }
      continue;
    }
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, '\t')) fields.push_back(field);
    ASR_REQUIRE(static_cast<int>(fields.size()) >= current_order + 1, "lm: malformed line " + line);
    double lp = std::stod(fields[0]);
    Context ctx;
    for (int i = 1; i < current_order; ++i) ctx.push_back(intern(fields[i]));
    int w = intern(fields[current_order]);
    model.probs_[current_order - 1][ctx][w] = lp;
    if (fields.size() >= static_cast<size_t>(current_order + 3) && fields[current_order + 1] == "<bow>") {
      Context full(ctx);
      full.push_back(w);
      model.bows_[current_order][full] = std::stod(fields[current_order + 2]);
    }
  }
  ASR_REQUIRE(model.order_ >= 1, "lm: no \\data\\ section in " + path);
  return model;
}

}  // namespace asr::lm

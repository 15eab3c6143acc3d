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

#include "asr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "asr/common.hpp"
#include "asr/features.hpp"

namespace asr::metrics {

namespace {

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace

double wer(const std::string& reference, const std::string& hypothesis) {
  auto ref = words_of(reference);
  auto hyp = words_of(hypothesis);
  if (ref.empty()) return hyp.empty() ? 0.0 : 1.0;
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

double cer(const std::string& reference, const std::string& hypothesis) {
  auto ref = utf8_graphemes(reference);
  auto hyp = utf8_graphemes(hypothesis);
  if (ref.empty()) return hyp.empty() ? 0.0 : 1.0;
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

double percentile(std::vector<double> values, double p) {
  ASR_REQUIRE(!values.empty(), "percentile: empty sample");
  ASR_REQUIRE(p >= 0 && p <= 100, "percentile: p out of range");
  std::sort(values.begin(), values.end());
  double pos = p / 100.0 * (values.size() - 1);
  size_t lo = static_cast<size_t>(pos);
  size_t hi = std::min(lo + 1, values.size() - 1);
  double frac = pos - lo;
  return values[lo] * (1 - frac) + values[hi] * frac;
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  ASR_REQUIRE(scores.size() == positive.size(), "roc_auc: size mismatch");
  // Mann-Whitney U: pairs ordered correctly, ties half credit.
  double wins = 0;
  long pos = 0, neg = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    ++pos;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  for (bool p : positive) neg += p ? 0 : 1;
  ASR_REQUIRE(pos > 0 && neg > 0, "roc_auc: need both classes");
  return wins / (static_cast<double>(pos) * neg);
}

}  // namespace asr::metrics

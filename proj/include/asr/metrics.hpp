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

#ifndef ASR_METRICS_HPP
#define ASR_METRICS_HPP

#include <string>
#include <vector>

namespace asr::metrics {

// Levenshtein distance with unit costs.
template <typename Seq>
size_t edit_distance(const Seq& a, const Seq& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Word error rate: edit distance over space-split tokens, normalized by
// the reference length.
double wer(const std::string& reference, const std::string& hypothesis);

// Character error rate over UTF-8 graphemes.
double cer(const std::string& reference, const std::string& hypothesis);

// Percentile by linear interpolation, p in [0, 100].
double percentile(std::vector<double> values, double p);

// Area under the ROC curve; `positive` marks the class that high scores
// should indicate.
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive);

}  // namespace asr::metrics

#endif  // ASR_METRICS_HPP

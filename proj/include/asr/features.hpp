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

#ifndef ASR_FEATURES_HPP
#define ASR_FEATURES_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asr/audio.hpp"
#include "asr/common.hpp"

namespace asr {

using LabelSequence = std::vector<int>;

// T x F log-power spectrogram frames for one utterance.
struct FeatureSequence {
  Matrix frames;
  real frame_shift_s = 0;
};

struct SpectrogramConfig {
  real window_s = 0.020;
  real hop_s = 0.010;
  real log_floor = 1e-10;  // added to power before the log
};

// Log-power spectrogram over Hann windows. The FFT length is the window
// length rounded up to a power of two; F = nfft/2 + 1 bins. Throws when
// the clip is shorter than one window. T = floor((N - W)/H) + 1.
FeatureSequence compute_spectrogram(const AudioClip& clip, const SpectrogramConfig& cfg = {});

// Frame count for N samples with window W and hop H, N >= W.
int spectrogram_frame_count(size_t n_samples, int window, int hop);

// Per-bin first and second moments. Doubles as the running-average store
// for inference-mode batch normalization.
struct NormalizerState {
  std::vector<real> mean;
  std::vector<real> var;
  long count = 0;

  bool primed() const { return count > 0; }
  // Exact-moment accumulation, for priming from training data.
  void accumulate(const Matrix& frames);
};

enum class NormalizeMode { kWholeUtterance, kStreaming };

// Whole-utterance mode: every bin to mean 0, variance 1 over the
// utterance. Streaming mode: exponential moving average per bin, seeded
// from `state` (must be primed from training statistics) and advanced
// frame by frame using only past input; `state` is updated in place.
Matrix normalize(const Matrix& features, NormalizeMode mode, NormalizerState* state = nullptr,
                 real ema_decay = 0.999);

// Ordered grapheme inventory. The CTC blank is not a symbol; by convention
// its index is size(), one past the last real symbol.
class Alphabet {
 public:
  Alphabet() = default;
  explicit Alphabet(std::vector<std::string> symbols);

  // One symbol per line; the token "<space>" denotes a literal space.
  static Alphabet from_file(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(symbols_.size()); }
  int blank() const { return size(); }
  const std::string& symbol(int id) const;
  std::optional<int> id_of(const std::string& symbol) const;
  int space_id() const { return space_id_; }

  // Splits UTF-8 text into per-codepoint graphemes. Unknown graphemes
  // throw.
  LabelSequence encode_text(const std::string& text) const;
  std::string decode(const LabelSequence& labels) const;

  uint64_t hash() const;

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, int> index_;
  int space_id_ = -1;
};

// Splits UTF-8 text into codepoint strings. Exposed for corpus handling.
std::vector<std::string> utf8_graphemes(const std::string& text);

// Maps between unigram labels and non-overlapping bigram labels. Each word
// is split into consecutive character pairs, left to right; an odd final
// character stays a unigram and the space separator always stays a
// unigram. Pairs outside the table fall back to their two unigrams, so
// decode(encode(x)) == x for any x over the unigram alphabet.
class BigramCodec {
 public:
  // The table holds every pair that occurs in the corpus words under the
  // non-overlapping segmentation.
  static BigramCodec build(const std::vector<std::string>& corpus_lines, const Alphabet& unigram);

  // "ab<TAB>id" lines; ids index the coded alphabet.
  static BigramCodec load(const std::string& path, const Alphabet& unigram);
  void save(const std::string& path) const;

  const Alphabet& unigram_alphabet() const { return unigram_; }
  // Unigram symbols first (same ids), bigram symbols after.
  const Alphabet& coded_alphabet() const { return coded_; }

  LabelSequence encode(const LabelSequence& unigram_labels) const;
  LabelSequence decode(const LabelSequence& coded_labels) const;

 private:
  BigramCodec(const Alphabet& unigram, const std::vector<std::string>& bigrams);

  Alphabet unigram_;
  Alphabet coded_;
  std::map<std::pair<int, int>, int> pair_to_coded_;
};

}  // namespace asr

#endif  // ASR_FEATURES_HPP

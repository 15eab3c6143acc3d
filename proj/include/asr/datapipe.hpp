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

#ifndef ASR_DATAPIPE_HPP
#define ASR_DATAPIPE_HPP

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "asr/audio.hpp"
#include "asr/features.hpp"
#include "asr/network.hpp"

namespace asr::datapipe {

// ---------------------------------------------------------------------------
// Alignment and segmentation

// Viterbi alignment of a transcript to model outputs; empty when the
// transcript cannot fit the frame count (flagged for rejection).
std::optional<std::vector<int>> align_frames(const Matrix& frame_logprobs,
                                             const LabelSequence& transcript, int blank);

// Model-driven form: runs an inference forward pass first.
std::optional<std::vector<int>> align_long(const Matrix& features, const LabelSequence& transcript,
                                           nn::Network& model);

struct SegmentedUtterance {
  std::string provenance_id;
  int start_frame = 0;  // inclusive
  int end_frame = 0;    // exclusive
  LabelSequence transcript;
};

// Cuts the alignment at every silence stretch (consecutive blank or space
// frames) of at least min_blank_run frames; with require_space the stretch
// must contain a space emission, so cuts land on word boundaries only.
// Longer min_blank_run means longer segments.
std::vector<SegmentedUtterance> segment(const std::vector<int>& alignment, int blank, int space_id,
                                        int min_blank_run, bool require_space,
                                        const std::string& provenance_id);

// ---------------------------------------------------------------------------
// Filtering

struct FilterFeatures {
  double raw_ctc_cost = 0;
  double ctc_cost_per_frame = 0;
  double ctc_cost_per_char = 0;
  double frames_per_char = 0;
  double n_words = 0;
  double n_chars = 0;
  bool feasible = true;  // false: alignment failed, hard reject

  std::array<double, 6> values() const {
    return {raw_ctc_cost, ctc_cost_per_frame, ctc_cost_per_char, frames_per_char, n_words, n_chars};
  }
};

FilterFeatures compute_filter_features(const Matrix& frame_logprobs, const LabelSequence& transcript,
                                       int blank, int n_words);

// Logistic regression over the six features (inputs standardized
// internally). classify_bad() hard-rejects infeasible examples before the
// linear score is consulted.
class FilterClassifier {
 public:
  // labels: true = bad example.
  static FilterClassifier train(const std::vector<std::pair<FilterFeatures, bool>>& labeled,
                                int iterations = 2000, double lr = 0.5);

  double bad_score(const FilterFeatures& f) const;  // P(bad) in [0,1]
  bool classify_bad(const FilterFeatures& f) const;

  // Picks the decision threshold on labeled examples so that the kept
  // ("good") portion reaches the target precision, keeping as much data as
  // possible.
  void choose_threshold(const std::vector<std::pair<FilterFeatures, bool>>& labeled,
                        double target_good_precision);

  double threshold = 0.5;

 private:
  std::array<double, 7> w_{};     // six weights + bias
  std::array<double, 6> mean_{};  // feature standardization
  std::array<double, 6> std_{1, 1, 1, 1, 1, 1};

  double raw_score(const FilterFeatures& f) const;
};

// ---------------------------------------------------------------------------
// Augmentation and sampling

struct AugmentConfig {
  double fraction = 0.4;
  double snr_db_lo = 0;
  double snr_db_hi = 30;
  uint64_t seed = 1;
};

// Mixes noise into exactly round(fraction * N) utterances chosen at random
// without replacement; each gets an SNR drawn uniformly from the range and
// a random slice of a random noise clip. Returns the augmented indices.
std::vector<size_t> augment_noise(std::vector<AudioClip>& dataset,
                                  const std::vector<AudioClip>& noise_bank,
                                  const AugmentConfig& cfg);

// Uniform sample of floor-rounded fraction * n indices, without
// replacement, returned in ascending order.
std::vector<size_t> scale_sample(size_t n, double fraction, uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset manifest (one JSON object per line)

struct ManifestEntry {
  std::string id;
  std::string audio_path;
  std::string transcript;
  double duration_s = 0;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

}  // namespace asr::datapipe

#endif  // ASR_DATAPIPE_HPP

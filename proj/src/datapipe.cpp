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

#include "asr/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "asr/ctc.hpp"

namespace asr::datapipe {

std::optional<std::vector<int>> align_frames(const Matrix& frame_logprobs,
                                             const LabelSequence& transcript, int blank) {
  if (frame_logprobs.rows() < ctc::min_frames(transcript)) return std::nullopt;
  try {
    return ctc::viterbi_align(frame_logprobs, transcript, blank);
  } catch (const std::runtime_error&) {
    // Zero-probability frames can make a structurally feasible label
    // unreachable; flag for rejection.
    return std::nullopt;
  }
}

std::optional<std::vector<int>> align_long(const Matrix& features, const LabelSequence& transcript,
                                           nn::Network& model) {
  nn::Batch logits = model.forward({features}, /*train=*/false);
  return align_frames(logits[0], transcript, model.output_dim() - 1);
}

std::vector<SegmentedUtterance> segment(const std::vector<int>& alignment, int blank, int space_id,
                                        int min_blank_run, bool require_space,
                                        const std::string& provenance_id) {
  ASR_REQUIRE(min_blank_run >= 1, "segment: min_blank_run must be >= 1");
  int frames = static_cast<int>(alignment.size());
  auto is_silence = [&](int t) { return alignment[t] == blank || alignment[t] == space_id; };

  // Cut points: midpoints of qualifying silence stretches.
  std::vector<int> cuts;
  int t = 0;
  while (t < frames) {
    if (!is_silence(t)) {
      ++t;
      continue;
    }
    int run_start = t;
    bool has_space = false;
    while (t < frames && is_silence(t)) {
      has_space = has_space || alignment[t] == space_id;
      ++t;
    }
    int run_len = t - run_start;
    if (run_start == 0 || t == frames) continue;  // leading/trailing silence never splits
    if (run_len < min_blank_run) continue;
    if (require_space && !has_space) continue;
    cuts.push_back(run_start + run_len / 2);
  }

  std::vector<SegmentedUtterance> out;
  int begin = 0;
  int index = 0;
  auto emit = [&](int end) {
    SegmentedUtterance seg;
    seg.provenance_id = provenance_id + ":" + std::to_string(index++);
    seg.start_frame = begin;
    seg.end_frame = end;
    for (int i = begin; i < end; ++i) {
      if (alignment[i] == blank) continue;
      if (i > begin && alignment[i] == alignment[i - 1]) continue;
      seg.transcript.push_back(alignment[i]);
    }
    out.push_back(std::move(seg));
    begin = end;
  };
  for (int cut : cuts) emit(cut);
  emit(frames);
  return out;
}

FilterFeatures compute_filter_features(const Matrix& frame_logprobs, const LabelSequence& transcript,
                                       int blank, int n_words) {
  FilterFeatures f;
  f.n_chars = static_cast<double>(transcript.size());
  f.n_words = static_cast<double>(n_words);
  auto res = ctc::ctc_loss_reference(frame_logprobs, transcript, blank);
  if (!res.feasible) {
    f.feasible = false;
    f.raw_ctc_cost = std::numeric_limits<double>::infinity();
    return f;
  }
  double frames = frame_logprobs.rows();
  double chars = std::max(1.0, f.n_chars);
  f.raw_ctc_cost = res.loss;
  f.ctc_cost_per_frame = res.loss / frames;
  f.ctc_cost_per_char = res.loss / chars;
  f.frames_per_char = frames / chars;
  return f;
}

double FilterClassifier::raw_score(const FilterFeatures& f) const {
  auto x = f.values();
  double z = w_[6];
  for (int i = 0; i < 6; ++i) z += w_[i] * (x[i] - mean_[i]) / std_[i];
  return z;
}

double FilterClassifier::bad_score(const FilterFeatures& f) const {
  if (!f.feasible) return 1.0;
  return 1.0 / (1.0 + std::exp(-raw_score(f)));
}

bool FilterClassifier::classify_bad(const FilterFeatures& f) const {
  if (!f.feasible) return true;  // hard reject, no classifier consulted
  return bad_score(f) > threshold;
}

FilterClassifier FilterClassifier::train(const std::vector<std::pair<FilterFeatures, bool>>& labeled,
                                         int iterations, double lr) {
  ASR_REQUIRE(!labeled.empty(), "FilterClassifier: no training examples");
  FilterClassifier c;
  // Standardize features over the feasible examples.
  long n = 0;
  for (const auto& [f, bad] : labeled) {
    if (!f.feasible) continue;
    auto x = f.values();
    for (int i = 0; i < 6; ++i) c.mean_[i] += x[i];
    ++n;
  }
  ASR_REQUIRE(n > 0, "FilterClassifier: all examples infeasible");
  for (int i = 0; i < 6; ++i) c.mean_[i] /= n;
  c.std_.fill(0);
  for (const auto& [f, bad] : labeled) {
    if (!f.feasible) continue;
    auto x = f.values();
    for (int i = 0; i < 6; ++i) c.std_[i] += (x[i] - c.mean_[i]) * (x[i] - c.mean_[i]);
  }
  for (int i = 0; i < 6; ++i) c.std_[i] = std::max(1e-9, std::sqrt(c.std_[i] / n));

  // Full-batch gradient descent on the logistic loss.
  for (int it = 0; it < iterations; ++it) {
    std::array<double, 7> grad{};
    for (const auto& [f, bad] : labeled) {
      if (!f.feasible) continue;
      double p = 1.0 / (1.0 + std::exp(-c.raw_score(f)));
      double err = p - (bad ? 1.0 : 0.0);
      auto x = f.values();
      for (int i = 0; i < 6; ++i) grad[i] += err * (x[i] - c.mean_[i]) / c.std_[i];
      grad[6] += err;
    }
    for (int i = 0; i < 7; ++i) c.w_[i] -= lr * grad[i] / n;
  }
  return c;
}

void FilterClassifier::choose_threshold(const std::vector<std::pair<FilterFeatures, bool>>& labeled,
                                        double target_good_precision) {
  // Sweep candidate thresholds; keep the most permissive one whose kept
  // portion is clean enough.
  std::vector<double> scores;
  for (const auto& [f, bad] : labeled)
    if (f.feasible) scores.push_back(bad_score(f));
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

  double best = 0.5;
  double best_kept = -1;
  std::vector<double> candidates = scores;
  candidates.push_back(1.0);
  for (double th : candidates) {
    long kept = 0, kept_good = 0;
    for (const auto& [f, bad] : labeled) {
      if (!f.feasible) continue;
      if (bad_score(f) > th) continue;  // classified bad, dropped
      ++kept;
      kept_good += bad ? 0 : 1;
    }
    if (kept == 0) continue;
    double precision = static_cast<double>(kept_good) / kept;
    if (precision >= target_good_precision && kept > best_kept) {
      best_kept = kept;
      best = th;
    }
  }
  threshold = best;
}

std::vector<size_t> augment_noise(std::vector<AudioClip>& dataset,
                                  const std::vector<AudioClip>& noise_bank,
                                  const AugmentConfig& cfg) {
  ASR_REQUIRE(cfg.fraction >= 0 && cfg.fraction <= 1, "augment_noise: fraction out of range");
  size_t want = static_cast<size_t>(std::lround(cfg.fraction * static_cast<double>(dataset.size())));
  if (want == 0) return {};
  ASR_REQUIRE(!noise_bank.empty(), "augment_noise: empty noise bank with a positive fraction");

  Rng rng(cfg.seed);
  std::vector<size_t> indices(dataset.size());
  for (size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  rng.shuffle(indices);
  indices.resize(want);

  for (size_t idx : indices) {
    AudioClip& clip = dataset[idx];
    const AudioClip& noise = noise_bank[rng.below(noise_bank.size())];
    ASR_REQUIRE(!noise.samples.empty(), "augment_noise: empty noise clip");
    size_t offset = rng.below(noise.samples.size());
    double snr_db = rng.uniform(cfg.snr_db_lo, cfg.snr_db_hi);

    double sig_power = 0, noise_power = 0;
    std::vector<real> slice(clip.samples.size());
    for (size_t i = 0; i < clip.samples.size(); ++i) {
      slice[i] = noise.samples[(offset + i) % noise.samples.size()];
      sig_power += static_cast<double>(clip.samples[i]) * clip.samples[i];
      noise_power += static_cast<double>(slice[i]) * slice[i];
    }
    double scale = 0;
    if (sig_power > 0 && noise_power > 0)
      scale = std::sqrt(sig_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
    for (size_t i = 0; i < clip.samples.size(); ++i)
      clip.samples[i] += static_cast<real>(scale) * slice[i];
  }
  std::sort(indices.begin(), indices.end());
  return indices;
}

std::vector<size_t> scale_sample(size_t n, double fraction, uint64_t seed) {
  ASR_REQUIRE(fraction > 0 && fraction <= 1, "scale_sample: fraction must be in (0, 1]");
  size_t want = static_cast<size_t>(std::lround(fraction * static_cast<double>(n)));
  want = std::min(want, n);
  std::vector<size_t> indices(n);
  for (size_t i = 0; i < n; ++i) indices[i] = i;
  Rng rng(seed);
  rng.shuffle(indices);
  indices.resize(want);
  std::sort(indices.begin(), indices.end());
  return indices;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  ASR_REQUIRE(is.good(), "read_manifest: cannot open " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.audio_path = j.at("audio_path").get<std::string>();
    e.transcript = j.at("transcript").get<std::string>();
    e.duration_s = j.at("duration_s").get<double>();
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  ASR_REQUIRE(os.good(), "write_manifest: cannot open " + path);
  for (const auto& e : entries) {
    nlohmann::json j;
    j["id"] = e.id;
    j["audio_path"] = e.audio_path;
    j["transcript"] = e.transcript;
    j["duration_s"] = e.duration_s;
    os << j.dump() << '\n';
  }
}

}  // namespace asr::datapipe

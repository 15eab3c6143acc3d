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

#include "asr/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <sstream>

namespace asr {

namespace {

constexpr double kPi = 3.14159265358979323846;

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 FFT, in place. n must be a power of two.
void fft(std::vector<std::complex<double>>& a) {
  size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * kPi / static_cast<double>(len);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

std::vector<double> hann_window(int w) {
  std::vector<double> win(w, 1.0);
  if (w > 1)
    for (int i = 0; i < w; ++i) win[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (w - 1));
  return win;
}

}  // namespace

int spectrogram_frame_count(size_t n_samples, int window, int hop) {
  ASR_REQUIRE(n_samples >= static_cast<size_t>(window), "spectrogram: clip shorter than one window");
  return static_cast<int>((n_samples - window) / hop) + 1;
}

FeatureSequence compute_spectrogram(const AudioClip& clip, const SpectrogramConfig& cfg) {
  ASR_REQUIRE(clip.sample_rate > 0, "spectrogram: sample_rate must be positive");
  int window = static_cast<int>(std::lround(cfg.window_s * clip.sample_rate));
  int hop = static_cast<int>(std::lround(cfg.hop_s * clip.sample_rate));
  ASR_REQUIRE(window >= 1 && hop >= 1, "spectrogram: window and hop must be at least one sample");
  int frames = spectrogram_frame_count(clip.samples.size(), window, hop);

  int nfft = next_pow2(window);
  int bins = nfft / 2 + 1;
  std::vector<double> win = hann_window(window);
  FeatureSequence out;
  out.frame_shift_s = static_cast<real>(hop) / clip.sample_rate;
  out.frames = Matrix(frames, bins);

  std::vector<std::complex<double>> buf(nfft);
  for (int t = 0; t < frames; ++t) {
    const real* src = clip.samples.data() + static_cast<size_t>(t) * hop;
    for (int i = 0; i < window; ++i) buf[i] = src[i] * win[i];
    std::fill(buf.begin() + window, buf.end(), std::complex<double>(0.0));
    fft(buf);
    for (int k = 0; k < bins; ++k) {
      double power = std::norm(buf[k]);
      out.frames(t, k) = static_cast<real>(std::log(power + cfg.log_floor));
    }
  }
  return out;
}

void NormalizerState::accumulate(const Matrix& frames) {
  if (mean.empty()) {
    mean.assign(frames.cols(), 0);
    var.assign(frames.cols(), 0);
  }
  ASR_REQUIRE(static_cast<int>(mean.size()) == frames.cols(), "NormalizerState: bin count mismatch");
  // Merge exact moments of the new block with the stored ones.
  long n_new = frames.rows();
  if (n_new == 0) return;
  for (int k = 0; k < frames.cols(); ++k) {
    double m = 0, s = 0;
    for (int t = 0; t < frames.rows(); ++t) m += frames(t, k);
    m /= n_new;
    for (int t = 0; t < frames.rows(); ++t) {
      double d = frames(t, k) - m;
      s += d * d;
    }
    s /= n_new;
    double total = count + n_new;
    double delta = m - mean[k];
    double merged_mean = mean[k] + delta * n_new / total;
    double merged_var =
        (count * (var[k] + (mean[k] - merged_mean) * (mean[k] - merged_mean)) +
         n_new * (s + (m - merged_mean) * (m - merged_mean))) /
        total;
    mean[k] = static_cast<real>(merged_mean);
    var[k] = static_cast<real>(merged_var);
  }
  count += n_new;
}

Matrix normalize(const Matrix& features, NormalizeMode mode, NormalizerState* state, real ema_decay) {
  constexpr real kVarEps = 1e-12;
  Matrix out(features.rows(), features.cols());
  if (mode == NormalizeMode::kWholeUtterance) {
    ASR_REQUIRE(features.rows() >= 1, "normalize: empty utterance");
    for (int k = 0; k < features.cols(); ++k) {
      double m = 0;
      for (int t = 0; t < features.rows(); ++t) m += features(t, k);
      m /= features.rows();
      double v = 0;
      for (int t = 0; t < features.rows(); ++t) {
        double d = features(t, k) - m;
        v += d * d;
      }
      v /= features.rows();
      real scale = 1.0 / std::sqrt(v + kVarEps);
      for (int t = 0; t < features.rows(); ++t)
        out(t, k) = static_cast<real>((features(t, k) - m) * scale);
    }
    return out;
  }

  ASR_REQUIRE(state != nullptr && state->primed(),
              "normalize: streaming mode needs a state primed from training statistics");
  ASR_REQUIRE(static_cast<int>(state->mean.size()) == features.cols(),
              "normalize: state bin count mismatch");
  ASR_REQUIRE(ema_decay > 0 && ema_decay < 1, "normalize: ema_decay must be in (0,1)");
  for (int t = 0; t < features.rows(); ++t) {
    for (int k = 0; k < features.cols(); ++k) {
      real x = features(t, k);
      state->mean[k] = ema_decay * state->mean[k] + (1 - ema_decay) * x;
      real d = x - state->mean[k];
      state->var[k] = ema_decay * state->var[k] + (1 - ema_decay) * d * d;
      out(t, k) = d / std::sqrt(state->var[k] + kVarEps);
    }
  }
  return out;
}

Alphabet::Alphabet(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  for (int i = 0; i < static_cast<int>(symbols_.size()); ++i) {
    ASR_REQUIRE(!symbols_[i].empty(), "Alphabet: empty symbol");
    ASR_REQUIRE(index_.emplace(symbols_[i], i).second, "Alphabet: duplicate symbol '" + symbols_[i] + "'");
    if (symbols_[i] == " ") space_id_ = i;
  }
}

Alphabet Alphabet::from_file(const std::string& path) {
  std::ifstream is(path);
  ASR_REQUIRE(is.good(), "Alphabet: cannot open " + path);
  std::vector<std::string> symbols;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    symbols.push_back(line == "<space>" ? " " : line);
  }
  return Alphabet(std::move(symbols));
}

void Alphabet::save(const std::string& path) const {
  std::ofstream os(path);
  ASR_REQUIRE(os.good(), "Alphabet: cannot open " + path);
  for (const auto& s : symbols_) os << (s == " " ? "<space>" : s) << '\n';
}

const std::string& Alphabet::symbol(int id) const {
  ASR_REQUIRE(id >= 0 && id < size(), "Alphabet: symbol id out of range");
  return symbols_[id];
}

std::optional<int> Alphabet::id_of(const std::string& symbol) const {
  auto it = index_.find(symbol);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> utf8_graphemes(const std::string& text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    unsigned char lead = static_cast<unsigned char>(text[i]);
    size_t len = lead < 0x80 ? 1 : lead < 0xE0 ? 2 : lead < 0xF0 ? 3 : 4;
    len = std::min(len, text.size() - i);
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

LabelSequence Alphabet::encode_text(const std::string& text) const {
  LabelSequence labels;
  for (const auto& g : utf8_graphemes(text)) {
    auto id = id_of(g);
    ASR_REQUIRE(id.has_value(), "Alphabet: grapheme '" + g + "' not in alphabet");
    labels.push_back(*id);
  }
  return labels;
}

std::string Alphabet::decode(const LabelSequence& labels) const {
  std::string out;
  for (int id : labels) out += symbol(id);
  return out;
}

uint64_t Alphabet::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : symbols_) {
    h = fnv1a64(s.data(), s.size(), h);
    h = fnv1a64("\x1f", 1, h);
  }
  return h;
}

namespace {

// Non-overlapping pair segmentation of one word's labels.
std::vector<std::pair<int, int>> word_pairs(const LabelSequence& word) {
  std::vector<std::pair<int, int>> pairs;
  for (size_t i = 0; i + 1 < word.size(); i += 2) pairs.push_back({word[i], word[i + 1]});
  return pairs;
}

}  // namespace

BigramCodec::BigramCodec(const Alphabet& unigram, const std::vector<std::string>& bigrams)
    : unigram_(unigram) {
  std::vector<std::string> coded_symbols;
  for (int i = 0; i < unigram.size(); ++i) coded_symbols.push_back(unigram.symbol(i));
  for (const auto& b : bigrams) coded_symbols.push_back(b);
  coded_ = Alphabet(std::move(coded_symbols));
  for (const auto& b : bigrams) {
    auto graphemes = utf8_graphemes(b);
    ASR_REQUIRE(graphemes.size() == 2, "BigramCodec: bigram '" + b + "' is not two graphemes");
    auto a = unigram.id_of(graphemes[0]);
    auto c = unigram.id_of(graphemes[1]);
    ASR_REQUIRE(a && c, "BigramCodec: bigram '" + b + "' uses unknown graphemes");
    pair_to_coded_[{*a, *c}] = *coded_.id_of(b);
  }
}

BigramCodec BigramCodec::build(const std::vector<std::string>& corpus_lines, const Alphabet& unigram) {
  ASR_REQUIRE(unigram.space_id() >= 0, "BigramCodec: unigram alphabet needs a space symbol");
  std::vector<std::string> bigrams;
  std::map<std::pair<int, int>, bool> seen;
  for (const auto& line : corpus_lines) {
    LabelSequence labels = unigram.encode_text(line);
    LabelSequence word;
    auto flush = [&]() {
      for (auto [a, b] : word_pairs(word)) {
        if (!seen.emplace(std::make_pair(a, b), true).second) continue;
        bigrams.push_back(unigram.symbol(a) + unigram.symbol(b));
      }
      word.clear();
    };
    for (int id : labels) {
      if (id == unigram.space_id()) {
        flush();
      } else {
        word.push_back(id);
      }
    }
    flush();
  }
  std::sort(bigrams.begin(), bigrams.end());
  return BigramCodec(unigram, bigrams);
}

BigramCodec BigramCodec::load(const std::string& path, const Alphabet& unigram) {
  std::ifstream is(path);
  ASR_REQUIRE(is.good(), "BigramCodec: cannot open " + path);
  std::vector<std::pair<int, std::string>> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    ASR_REQUIRE(tab != std::string::npos, "BigramCodec: malformed line '" + line + "'");
    entries.push_back({std::stoi(line.substr(tab + 1)), line.substr(0, tab)});
  }
  std::sort(entries.begin(), entries.end());
  std::vector<std::string> bigrams;
  for (size_t i = 0; i < entries.size(); ++i) {
    ASR_REQUIRE(entries[i].first == unigram.size() + static_cast<int>(i),
                "BigramCodec: ids must be dense above the unigram alphabet");
    bigrams.push_back(entries[i].second);
  }
  return BigramCodec(unigram, bigrams);
}

void BigramCodec::save(const std::string& path) const {
  std::ofstream os(path);
  ASR_REQUIRE(os.good(), "BigramCodec: cannot open " + path);
  for (int id = unigram_.size(); id < coded_.size(); ++id)
    os << coded_.symbol(id) << '\t' << id << '\n';
}

LabelSequence BigramCodec::encode(const LabelSequence& unigram_labels) const {
  LabelSequence out;
  LabelSequence word;
  auto flush = [&]() {
    size_t i = 0;
    for (; i + 1 < word.size(); i += 2) {
      auto it = pair_to_coded_.find({word[i], word[i + 1]});
      if (it != pair_to_coded_.end()) {
        out.push_back(it->second);
      } else {
        // Unknown pair at test time: emit the two unigrams.
        out.push_back(word[i]);
        out.push_back(word[i + 1]);
      }
    }
    if (i < word.size()) out.push_back(word[i]);
    word.clear();
  };
  for (int id : unigram_labels) {
    ASR_REQUIRE(id >= 0 && id < unigram_.size(), "BigramCodec: label outside unigram alphabet");
    if (id == unigram_.space_id()) {
      flush();
      out.push_back(id);
    } else {
      word.push_back(id);
    }
  }
  flush();
  return out;
}

LabelSequence BigramCodec::decode(const LabelSequence& coded_labels) const {
  LabelSequence out;
  for (int id : coded_labels) {
    ASR_REQUIRE(id >= 0 && id < coded_.size(), "BigramCodec: unknown coded symbol id");
    if (id < unigram_.size()) {
      out.push_back(id);
    } else {
      auto graphemes = utf8_graphemes(coded_.symbol(id));
      out.push_back(*unigram_.id_of(graphemes[0]));
      out.push_back(*unigram_.id_of(graphemes[1]));
    }
  }
  return out;
}

}  // namespace asr

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
//
// Brute-force reference computations for tests. Everything here is
// independent of the library's lattice/beam machinery: path sums by full
// enumeration, convolutions by nested loops, derivatives by central
// differences.

#ifndef ASR_TESTS_ORACLES_HPP
#define ASR_TESTS_ORACLES_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "asr/common.hpp"

namespace oracle {

using asr::Matrix;
using asr::real;

// Collapse a frame labeling: merge consecutive repeats, then drop blanks.
inline std::vector<int> collapse(const std::vector<int>& path, int blank) {
  std::vector<int> out;
  for (size_t t = 0; t < path.size(); ++t) {
    if (t > 0 && path[t] == path[t - 1]) continue;
    if (path[t] != blank) out.push_back(path[t]);
  }
  return out;
}

// Sum over all (A+1)^T frame labelings that collapse to `label` of the
// product of per-frame probabilities. probs is T x (A+1), plain (not log).
inline double brute_force_path_sum(const Matrix& probs, const std::vector<int>& label, int blank) {
  int frames = probs.rows();
  int symbols = probs.cols();
  double total = 0.0;
  std::vector<int> path(frames, 0);
  std::function<void(int, double)> rec = [&](int t, double p) {
    if (t == frames) {
      if (collapse(path, blank) == label) total += p;
      return;
    }
    for (int k = 0; k < symbols; ++k) {
      path[t] = k;
      rec(t + 1, p * probs(t, k));
    }
  };
  rec(0, 1.0);
  return total;
}

// All valid CTC row paths for the blank-augmented label, as row-index
// sequences. Used for Viterbi and lattice-validity oracles.
inline std::vector<std::vector<int>> enumerate_row_paths(int frames, const std::vector<int>& aug, int blank) {
  int s_count = static_cast<int>(aug.size());
  std::vector<std::vector<int>> paths;
  std::vector<int> rows(frames);
  std::function<void(int, int)> rec = [&](int t, int s) {
    rows[t] = s;
    if (t == frames - 1) {
      if (s >= s_count - 2) paths.push_back(rows);
      return;
    }
    rec(t + 1, s);
    if (s + 1 < s_count) rec(t + 1, s + 1);
    if (s + 2 < s_count && aug[s + 2] != blank && aug[s + 2] != aug[s]) rec(t + 1, s + 2);
  };
  rec(0, 0);
  if (s_count > 1) rec(0, 1);
  return paths;
}

inline std::vector<int> rows_to_symbols(const std::vector<int>& rows, const std::vector<int>& aug) {
  std::vector<int> sym(rows.size());
  for (size_t t = 0; t < rows.size(); ++t) sym[t] = aug[rows[t]];
  return sym;
}

// Highest-probability row path; ties resolved by comparing row sequences
// from the last frame backwards, larger row first (the library's
// stay-over-advance rule realizes exactly this order).
inline std::vector<int> brute_force_viterbi(const Matrix& probs, const std::vector<int>& label, int blank) {
  std::vector<int> aug;
  aug.push_back(blank);
  for (int c : label) {
    aug.push_back(c);
    aug.push_back(blank);
  }
  auto paths = enumerate_row_paths(probs.rows(), aug, blank);
  double best_logp = -std::numeric_limits<double>::infinity();
  const std::vector<int>* best = nullptr;
  auto reversed_less = [](const std::vector<int>& a, const std::vector<int>& b) {
    for (int t = static_cast<int>(a.size()) - 1; t >= 0; --t)
      if (a[t] != b[t]) return a[t] < b[t];
    return false;
  };
  for (const auto& rows : paths) {
    double logp = 0;
    for (size_t t = 0; t < rows.size(); ++t) logp += std::log(probs(static_cast<int>(t), aug[rows[t]]));
    if (best == nullptr || logp > best_logp + 1e-12 ||
        (std::abs(logp - best_logp) <= 1e-12 && reversed_less(*best, rows))) {
      best_logp = logp;
      best = &rows;
    }
  }
  ASR_REQUIRE(best != nullptr, "brute_force_viterbi: no valid path");
  return rows_to_symbols(*best, aug);
}

// Central finite difference of a scalar function, one coordinate at a time.
inline Matrix finite_difference(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-6) {
  Matrix grad(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      real saved = x(i, j);
      x(i, j) = saved + h;
      double up = f(x);
      x(i, j) = saved - h;
      double down = f(x);
      x(i, j) = saved;
      grad(i, j) = (up - down) / (2 * h);
    }
  }
  return grad;
}

// Direct nested-loop 2D convolution with zero padding, no striding trick:
// out(ot, of) = sum over taps of filter * padded-input. Input and output
// are single-channel T x F matrices.
inline Matrix naive_conv2d(const Matrix& in, const Matrix& filter, int pad_top, int pad_left,
                           int stride_t, int stride_f, int out_t, int out_f) {
  Matrix out(out_t, out_f);
  for (int ot = 0; ot < out_t; ++ot) {
    for (int of = 0; of < out_f; ++of) {
      double acc = 0;
      for (int i = 0; i < filter.rows(); ++i) {
        for (int j = 0; j < filter.cols(); ++j) {
          int t = ot * stride_t - pad_top + i;
          int f = of * stride_f - pad_left + j;
          if (t < 0 || t >= in.rows() || f < 0 || f >= in.cols()) continue;
          acc += filter(i, j) * in(t, f);
        }
      }
      out(ot, of) = acc;
    }
  }
  return out;
}

// Plain O(N^2) DFT magnitude-squared of a real signal, bins 0..N/2.
inline std::vector<double> naive_power_spectrum(const std::vector<double>& x) {
  size_t n = x.size();
  std::vector<double> power(n / 2 + 1);
  for (size_t k = 0; k < power.size(); ++k) {
    double re = 0, im = 0;
    for (size_t i = 0; i < n; ++i) {
      double ang = -2.0 * 3.14159265358979323846 * static_cast<double>(k * i) / static_cast<double>(n);
      re += x[i] * std::cos(ang);
      im += x[i] * std::sin(ang);
    }
    power[k] = re * re + im * im;
  }
  return power;
}

}  // namespace oracle

#endif  // ASR_TESTS_ORACLES_HPP

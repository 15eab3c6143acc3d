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

#ifndef ASR_COMMON_HPP
#define ASR_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace asr {

#ifdef ASR_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

constexpr real kNegInf = -std::numeric_limits<real>::infinity();

// Throws std::runtime_error with a uniform prefix. Used for precondition
// and shape checks across the library.
[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error("asr: " + msg);
}

#define ASR_REQUIRE(cond, msg)      \
  do {                              \
    if (!(cond)) ::asr::fail(msg);  \
  } while (0)

// Dense row-major matrix of `real`. Small and unclever on purpose; every
// model in this codebase is desk scale.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, real fill = 0) : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return data_.empty(); }
  size_t size() const { return data_.size(); }

  real& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  real operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  real* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const real* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }

  void fill(real v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<real> data_;
};

// y += a
void add_inplace(Matrix& y, const Matrix& a);
// y += s * a
void axpy(Matrix& y, real s, const Matrix& a);
// out = a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// out = a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// out = a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// y = W * x + y for a single column vector x (x,y as flat spans)
void gemv_acc(const Matrix& w, const real* x, real* y);

// SplitMix64. Deterministic across platforms, unlike the standard library
// distributions; every seeded behavior in the project routes through this.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) { return next_u64() % n; }

  double normal() {
    // Box-Muller; one value per call keeps the stream simple to reason about.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// FNV-1a 64-bit, used for input manifests and checkpoint alphabet hashes.
uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t fnv1a64(const std::string& s);

}  // namespace asr

#endif  // ASR_COMMON_HPP

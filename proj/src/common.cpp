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

#include "asr/common.hpp"

namespace asr {

void add_inplace(Matrix& y, const Matrix& a) {
  ASR_REQUIRE(y.same_shape(a), "add_inplace: shape mismatch");
  real* yd = y.data();
  const real* ad = a.data();
  for (size_t i = 0; i < y.size(); ++i) yd[i] += ad[i];
}

void axpy(Matrix& y, real s, const Matrix& a) {
  ASR_REQUIRE(y.same_shape(a), "axpy: shape mismatch");
  real* yd = y.data();
  const real* ad = a.data();
  for (size_t i = 0; i < y.size(); ++i) yd[i] += s * ad[i];
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  ASR_REQUIRE(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    const real* arow = a.row(i);
    real* orow = out.row(i);
    for (int k = 0; k < a.cols(); ++k) {
      real aik = arow[k];
      if (aik == 0) continue;
      const real* brow = b.row(k);
      for (int j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  ASR_REQUIRE(a.rows() == b.rows(), "matmul_tn: inner dimension mismatch");
  Matrix out(a.cols(), b.cols());
  for (int k = 0; k < a.rows(); ++k) {
    const real* arow = a.row(k);
    const real* brow = b.row(k);
    for (int i = 0; i < a.cols(); ++i) {
      real aki = arow[i];
      if (aki == 0) continue;
      real* orow = out.row(i);
      for (int j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  ASR_REQUIRE(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i) {
    const real* arow = a.row(i);
    real* orow = out.row(i);
    for (int j = 0; j < b.rows(); ++j) {
      const real* brow = b.row(j);
      real acc = 0;
      for (int k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
      orow[j] += acc;
    }
  }
  return out;
}

void gemv_acc(const Matrix& w, const real* x, real* y) {
  for (int i = 0; i < w.rows(); ++i) {
    const real* wrow = w.row(i);
    real acc = 0;
    for (int j = 0; j < w.cols(); ++j) acc += wrow[j] * x[j];
    y[i] += acc;
  }
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace asr

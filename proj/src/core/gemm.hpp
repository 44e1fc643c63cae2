// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>

namespace bonnet::detail {

/// C[M x N] += A[M x K] * B[K x N], all row-major with leading dimensions.
///
/// Every C element accumulates its K products in increasing k order starting
/// from its current value, regardless of M/N blocking. Results are therefore
/// bit-identical under any row partitioning and between A*B and the
/// transposed formulation (B^T A^T)^T, which the layout-equivalence and
/// thread-count-invariance guarantees rely on. Float products are summed in
/// double and rounded once per call.
template <class T>
void gemm_acc(std::int64_t M, std::int64_t N, std::int64_t K, const T* __restrict A,
              std::int64_t lda, const T* __restrict B, std::int64_t ldb, T* __restrict C,
              std::int64_t ldc) {
  constexpr std::int64_t kBlockN = 256;
  double acc[4][kBlockN];
  for (std::int64_t j0 = 0; j0 < N; j0 += kBlockN) {
    const std::int64_t jn = std::min(kBlockN, N - j0);
    std::int64_t i = 0;
    for (; i + 4 <= M; i += 4) {
      for (int r = 0; r < 4; ++r) {
        const T* c = C + (i + r) * ldc + j0;
        for (std::int64_t j = 0; j < jn; ++j) {
          acc[r][j] = static_cast<double>(c[j]);
        }
      }
      double* __restrict c0 = acc[0];
      double* __restrict c1 = acc[1];
      double* __restrict c2 = acc[2];
      double* __restrict c3 = acc[3];
      for (std::int64_t k = 0; k < K; ++k) {
        const double a0 = A[(i + 0) * lda + k];
        const double a1 = A[(i + 1) * lda + k];
        const double a2 = A[(i + 2) * lda + k];
        const double a3 = A[(i + 3) * lda + k];
        const T* __restrict b = B + k * ldb + j0;
        for (std::int64_t j = 0; j < jn; ++j) {
          const double bj = b[j];
          c0[j] += a0 * bj;
          c1[j] += a1 * bj;
          c2[j] += a2 * bj;
          c3[j] += a3 * bj;
        }
      }
      for (int r = 0; r < 4; ++r) {
        T* c = C + (i + r) * ldc + j0;
        for (std::int64_t j = 0; j < jn; ++j) {
          c[j] = static_cast<T>(acc[r][j]);
        }
      }
    }
    for (; i < M; ++i) {
      T* __restrict c = C + i * ldc + j0;
      double* __restrict a0 = acc[0];
      for (std::int64_t j = 0; j < jn; ++j) {
        a0[j] = static_cast<double>(c[j]);
      }
      for (std::int64_t k = 0; k < K; ++k) {
        const double a = A[i * lda + k];
        const T* __restrict b = B + k * ldb + j0;
        for (std::int64_t j = 0; j < jn; ++j) {
          a0[j] += a * b[j];
        }
      }
      for (std::int64_t j = 0; j < jn; ++j) {
        c[j] = static_cast<T>(a0[j]);
      }
    }
  }
}

/// dst[N x M] = src[M x N]^T
template <class T>
void transpose(std::int64_t M, std::int64_t N, const T* src, T* dst) {
  for (std::int64_t i = 0; i < M; ++i) {
    for (std::int64_t j = 0; j < N; ++j) {
      dst[j * M + i] = src[i * N + j];
    }
  }
}

}  // namespace bonnet::detail

#pragma once

#include <cstdint>

namespace entstream::detail {

// Dense kernels shared by matmul and conv2d. All three accumulate into C
// (callers zero C first when needed) and reduce over k in a fixed order per
// output element, so results are bit-reproducible run to run.

/// C[M x N] += A[M x K] * B[K x N]
template <class S>
inline void gemm_nn(const S* A, const S* B, S* C, int M, int N, int K) {
  for (int i = 0; i < M; ++i) {
    const S* a = A + static_cast<std::int64_t>(i) * K;
    S* c = C + static_cast<std::int64_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const S av = a[k];
      const S* b = B + static_cast<std::int64_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

/// C[M x N] += A[M x K] * B^T with B stored [N x K] (row dot products).
template <class S>
inline void gemm_nt(const S* A, const S* B, S* C, int M, int N, int K) {
  constexpr int L = 8;  // independent accumulator lanes, fixed combine order
  for (int i = 0; i < M; ++i) {
    const S* a = A + static_cast<std::int64_t>(i) * K;
    S* c = C + static_cast<std::int64_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const S* b = B + static_cast<std::int64_t>(j) * K;
      S lanes[L] = {};
      int k = 0;
      for (; k + L <= K; k += L)
        for (int l = 0; l < L; ++l) lanes[l] += a[k + l] * b[k + l];
      S tail = 0;
      for (; k < K; ++k) tail += a[k] * b[k];
      S sum = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
              ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
      c[j] += sum + tail;
    }
  }
}

/// C[M x N] += A^T * B with A stored [K x M] (rank-1 updates over k).
template <class S>
inline void gemm_tn(const S* A, const S* B, S* C, int M, int N, int K) {
  for (int k = 0; k < K; ++k) {
    const S* a = A + static_cast<std::int64_t>(k) * M;
    const S* b = B + static_cast<std::int64_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const S av = a[i];
      S* c = C + static_cast<std::int64_t>(i) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace entstream::detail

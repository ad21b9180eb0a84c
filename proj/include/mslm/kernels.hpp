#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mslm {

// Worker-thread cap, settable via the MSLM_THREADS environment variable.
// Parallel kernels split work by output row only; the reduction order within
// each output element is always the same sequential k-order, so results are
// bitwise identical for any thread count.
inline int max_threads() {
  static int n = [] {
    if (const char* e = std::getenv("MSLM_THREADS")) {
      int v = std::atoi(e);
      if (v >= 1) return v;
    }
    return 1;
  }();
  return n;
}

namespace detail {

// C[m,n] += A[m,k] * B[k,n], row-major. i-k-j loop order: each C element is a
// strictly sequential sum over k, and row i of C depends only on row i of A.
template <typename T>
inline void gemm_rows(const T* a, const T* b, T* c, std::size_t row_begin, std::size_t row_end,
                      std::size_t K, std::size_t N) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    const T* arow = a + i * K;
    T* crow = c + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = arow[k];
      const T* brow = b + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
inline void gemm_accumulate(const T* a, const T* b, T* c, std::size_t M, std::size_t K,
                            std::size_t N) {
  const int threads = max_threads();
  const std::size_t work = M * K * N;
  if (threads <= 1 || M < 2 || work < (std::size_t{1} << 18)) {
    detail::gemm_rows(a, b, c, 0, M, K, N);
    return;
  }
  const std::size_t nthreads = std::min<std::size_t>(threads, M);
  std::vector<std::thread> pool;
  pool.reserve(nthreads - 1);
  const std::size_t chunk = (M + nthreads - 1) / nthreads;
  for (std::size_t t = 1; t < nthreads; ++t) {
    const std::size_t lo = std::min(M, t * chunk);
    const std::size_t hi = std::min(M, lo + chunk);
    if (lo < hi) pool.emplace_back(detail::gemm_rows<T>, a, b, c, lo, hi, K, N);
  }
  detail::gemm_rows(a, b, c, 0, std::min(M, chunk), K, N);
  for (auto& th : pool) th.join();
}

// out[n,m] = in[m,n]^T
template <typename T>
inline void transpose_into(const T* in, T* out, std::size_t M, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) out[j * M + i] = in[i * N + j];
}

}  // namespace mslm

#include "gemm.hpp"

#include <algorithm>
#include <vector>

namespace coforge::detail {

// Loop order contract: every output element c[i][j] accumulates its products
// a[i][k]*b[k][j] strictly in ascending k (gemm_nn, gemm_tn after the
// explicit transpose) or in the fixed 16-lane pattern documented at
// gemm_nt. The tiling below only changes which elements are computed
// together, never the per-element accumulation order, so outputs are
// bit-identical for any m/n and run to run.

namespace {

constexpr size_t kMr = 4;   // rows per tile
constexpr size_t kNr = 32;  // columns per tile

inline void tile_nn(size_t n, size_t k, const float* a, size_t lda, const float* b,
                    float* c, size_t ldc) {
  float acc[kMr][kNr];
  for (size_t r = 0; r < kMr; ++r)
    for (size_t j = 0; j < kNr; ++j) acc[r][j] = c[r * ldc + j];
  for (size_t kk = 0; kk < k; ++kk) {
    const float* brow = b + kk * n;
    for (size_t r = 0; r < kMr; ++r) {
      const float av = a[r * lda + kk];
      for (size_t j = 0; j < kNr; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (size_t r = 0; r < kMr; ++r)
    for (size_t j = 0; j < kNr; ++j) c[r * ldc + j] = acc[r][j];
}

}  // namespace

void gemm_nn(size_t m, size_t n, size_t k, const float* a, const float* b, float* c) {
  const size_t m_main = m - m % kMr;
  const size_t n_main = n - n % kNr;
  for (size_t i0 = 0; i0 < m_main; i0 += kMr) {
    for (size_t j0 = 0; j0 < n_main; j0 += kNr) {
      tile_nn(n, k, a + i0 * k, k, b + j0, c + i0 * n + j0, n);
    }
    // right edge
    for (size_t i = i0; i < i0 + kMr; ++i) {
      for (size_t j = n_main; j < n; ++j) {
        float acc = c[i * n + j];
        for (size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
        c[i * n + j] = acc;
      }
    }
  }
  // bottom edge
  for (size_t i = m_main; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      float acc = c[i * n + j];
      for (size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
    }
  }
}

// Dot-product form. Per element: 16 striped lane accumulators
// (lane = k mod 16, each lane ascending), then a fixed binary reduction tree.
void gemm_nt(size_t m, size_t n, size_t k, const float* a, const float* b, float* c) {
  constexpr size_t kLanes = 16;
  const size_t k_main = k - k % kLanes;
  for (size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    for (size_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      float lane[kLanes] = {};
      for (size_t kk = 0; kk < k_main; kk += kLanes)
        for (size_t l = 0; l < kLanes; ++l) lane[l] += arow[kk + l] * brow[kk + l];
      for (size_t kk = k_main; kk < k; ++kk) lane[kk - k_main] += arow[kk] * brow[kk];
      for (size_t step = kLanes / 2; step > 0; step /= 2)
        for (size_t l = 0; l < step; ++l) lane[l] += lane[l + step];
      c[i * n + j] += lane[0];
    }
  }
}

void gemm_tn(size_t m, size_t n, size_t k, const float* a, const float* b, float* c) {
  // Transpose A (k x m) once, then reuse the nn kernel; keeps the per-element
  // ascending-k order and the fast path.
  std::vector<float> at(m * k);
  for (size_t kk = 0; kk < k; ++kk)
    for (size_t i = 0; i < m; ++i) at[i * k + kk] = a[kk * m + i];
  gemm_nn(m, n, k, at.data(), b, c);
}

}  // namespace coforge::detail

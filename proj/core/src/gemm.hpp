#pragma once

#include <cstddef>

namespace coforge::detail {

// Small row-major GEMM kernels. Every output element accumulates its k terms
// in ascending k order, so results are bit-reproducible run to run; see the
// loop-order notes in gemm.cpp.

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(size_t m, size_t n, size_t k, const float* a, const float* b, float* c);

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(size_t m, size_t n, size_t k, const float* a, const float* b, float* c);

// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(size_t m, size_t n, size_t k, const float* a, const float* b, float* c);

}  // namespace coforge::detail

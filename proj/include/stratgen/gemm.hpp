#pragma once

namespace stratgen {

// Raw float32 matrix kernels. Accumulation order per output element is a
// fixed sequential k-sweep (16 partial lanes combined in index order for the
// dot-product variant), so results are bit-identical run to run.
//
// Acc=false overwrites C, Acc=true adds into it.

// C[m,n] = A[m,k] * B[k,n]
void gemm_nn(const float* A, const float* B, float* C, int m, int n, int k, bool acc);
// C[m,n] = A[m,k] * B[n,k]^T
void gemm_nt(const float* A, const float* B, float* C, int m, int n, int k, bool acc);
// C[m,n] = A[k,m]^T * B[k,n]
void gemm_tn(const float* A, const float* B, float* C, int m, int n, int k, bool acc);

}  // namespace stratgen

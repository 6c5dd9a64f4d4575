#include "stratgen/gemm.hpp"

#include <cstring>

namespace stratgen {

void gemm_nn(const float* A, const float* B, float* C, int m, int n, int k, bool acc) {
  for (int i = 0; i < m; ++i) {
    float* ci = C + static_cast<size_t>(i) * n;
    if (!acc) std::memset(ci, 0, sizeof(float) * n);
    const float* ai = A + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float a = ai[p];
      const float* bp = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += a * bp[j];
    }
  }
}

void gemm_nt(const float* A, const float* B, float* C, int m, int n, int k, bool acc) {
  constexpr int kLanes = 16;
  for (int i = 0; i < m; ++i) {
    const float* ai = A + static_cast<size_t>(i) * k;
    float* ci = C + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* bj = B + static_cast<size_t>(j) * k;
      float lanes[kLanes] = {0};
      int p = 0;
      for (; p + kLanes <= k; p += kLanes)
        for (int l = 0; l < kLanes; ++l) lanes[l] += ai[p + l] * bj[p + l];
      float tail = 0.0f;
      for (; p < k; ++p) tail += ai[p] * bj[p];
      float dot = tail;
      for (int l = 0; l < kLanes; ++l) dot += lanes[l];
      ci[j] = acc ? ci[j] + dot : dot;
    }
  }
}

void gemm_tn(const float* A, const float* B, float* C, int m, int n, int k, bool acc) {
  if (!acc) std::memset(C, 0, sizeof(float) * static_cast<size_t>(m) * n);
  for (int p = 0; p < k; ++p) {
    const float* ap = A + static_cast<size_t>(p) * m;
    const float* bp = B + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const float a = ap[i];
      float* ci = C + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += a * bp[j];
    }
  }
}

}  // namespace stratgen

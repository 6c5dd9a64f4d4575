#pragma once

// Shared test utilities: finite-difference gradient oracle and small
// tensor builders. The oracle is forward-only and never touches the tape.

#include <cmath>
#include <functional>
#include <vector>

#include "stratgen/common.hpp"
#include "stratgen/ops.hpp"
#include "stratgen/tensor.hpp"

namespace sgtest {

using stratgen::Rng;
using stratgen::Tensor;

inline Tensor random_tensor(stratgen::Shape shape, Rng& rng, float scl = 1.0f,
                            bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (float& v : *t.data) v = static_cast<float>(rng.normal()) * scl;
  return t;
}

// Central-difference derivative of `loss_fn` w.r.t. buf[idx].
// h_floor trades truncation error against float32 roundoff: plain ops use
// 1.0 (their losses are near-linear), whole-model checks use a smaller floor
// because layer-norm curvature near zero-valued parameters dominates.
inline double fd_derivative(const std::function<double()>& loss_fn, float* buf, int64_t idx,
                            double eps, double h_floor = 1.0) {
  const float saved = buf[idx];
  const double h = eps * std::max(h_floor, std::fabs(static_cast<double>(saved)));
  buf[idx] = static_cast<float>(saved + h);
  const double lp = loss_fn();
  buf[idx] = static_cast<float>(saved - h);
  const double lm = loss_fn();
  buf[idx] = saved;
  return (lp - lm) / (2.0 * h);
}

// Mixed absolute/relative agreement: |a-b| <= tol * max(1, |a|, |b|).
inline bool grads_agree(double analytic, double numeric, double tol) {
  const double scale = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) <= tol * scale;
}

// Checks n_probes random entries of `input`'s gradient against finite
// differences of `loss_fn` (which must rebuild the forward pass from the
// current contents of input.data). Returns the worst mismatch description.
struct GradCheckResult {
  bool ok = true;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline GradCheckResult check_gradient(Tensor& input,
                                      const std::function<Tensor()>& forward,
                                      Rng& probe_rng, int n_probes, double eps, double tol,
                                      double h_floor = 1.0) {
  input.zero_grad();
  Tensor loss = forward();
  stratgen::backward(loss);

  auto loss_fn = [&]() -> double {
    stratgen::NoGradGuard ng;
    return forward().item();
  };

  GradCheckResult res;
  for (int p = 0; p < n_probes; ++p) {
    const int64_t idx = probe_rng.randint(static_cast<int>(input.size()));
    const double analytic = (*input.grad)[idx];
    const double numeric = fd_derivative(loss_fn, input.ptr(), idx, eps, h_floor);
    if (!grads_agree(analytic, numeric, tol)) {
      res.ok = false;
      res.worst_index = idx;
      res.analytic = analytic;
      res.numeric = numeric;
      return res;
    }
  }
  return res;
}

// Fixed random projection so any-shaped output reduces to a scalar loss.
// Weights scale with 1/sqrt(numel) to keep the loss O(1); float32 forward
// noise would otherwise swamp the finite-difference quotient.
inline Tensor project_to_scalar(const Tensor& out, uint64_t seed) {
  Rng rng(seed);
  const float s = 1.0f / std::sqrt(static_cast<float>(out.size()));
  Tensor w = Tensor::zeros(out.shape, false);
  for (float& v : *w.data) v = static_cast<float>(rng.normal()) * s;
  return stratgen::sum(stratgen::mul(out, w));
}

}  // namespace sgtest

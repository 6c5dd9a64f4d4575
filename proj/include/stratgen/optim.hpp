#pragma once

#include <vector>

#include "stratgen/tensor.hpp"

namespace stratgen {

struct AdamWConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.96f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
  float grad_clip = 0.0f;  // global-norm threshold, 0 disables
};

// AdamW with decoupled weight decay and bias correction. Gradient clipping
// rescales grads in place when the global norm exceeds the threshold; the
// caller zeroes grads after the step.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

  // Applies one update. Throws ContractError if any parameter lacks a grad.
  void step();
  void zero_grad();
  void set_lr(float lr) { cfg_.lr = lr; }
  float lr() const { return cfg_.lr; }
  int64_t step_count() const { return step_; }

  // Global grad norm across all parameters (pre-clip value of the last step).
  float last_grad_norm() const { return last_norm_; }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  int64_t step_ = 0;
  float last_norm_ = 0.0f;
};

// Linear warmup to base_lr, then cosine decay to zero at total_steps.
float warmup_cosine_lr(float base_lr, int64_t step, int64_t warmup_steps, int64_t total_steps);

}  // namespace stratgen

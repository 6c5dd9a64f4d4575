#include "stratgen/optim.hpp"

#include <cmath>

namespace stratgen {

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.emplace_back(p->tensor.size(), 0.0f);
    v_.emplace_back(p->tensor.size(), 0.0f);
  }
}

void AdamW::step() {
  for (Parameter* p : params_)
    if (!p->tensor.grad)
      throw ContractError("AdamW::step: parameter '" + p->name + "' has no gradient");

  double norm_sq = 0.0;
  for (Parameter* p : params_)
    for (float g : *p->tensor.grad) norm_sq += static_cast<double>(g) * g;
  last_norm_ = static_cast<float>(std::sqrt(norm_sq));
  float gscale = 1.0f;
  if (cfg_.grad_clip > 0.0f && last_norm_ > cfg_.grad_clip)
    gscale = cfg_.grad_clip / last_norm_;

  ++step_;
  const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_));
  const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i]->tensor;
    float* w = t.ptr();
    const float* g = t.gptr();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const int64_t n = t.size();
    for (int64_t j = 0; j < n; ++j) {
      const float gj = g[j] * gscale;
      m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * gj * gj;
      const float mh = m[j] / bc1;
      const float vh = v[j] / bc2;
      w[j] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[j]);
    }
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->tensor.zero_grad();
}

float warmup_cosine_lr(float base_lr, int64_t step, int64_t warmup_steps, int64_t total_steps) {
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<float>(step + 1) / static_cast<float>(warmup_steps);
  if (total_steps <= warmup_steps) return base_lr;
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5f * (1.0f + static_cast<float>(std::cos(3.14159265358979323846 * t)));
}

}  // namespace stratgen

#pragma once

// AdamW with decoupled weight decay, plus the cosine learning-rate schedule
// used by every training loop in the project.

#include <cmath>
#include <cstdio>
#include <vector>

#include "dfallm/nn/param.hpp"
#include "dfallm/nn/tensor.hpp"

namespace dfallm::nn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <class T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>*> params, AdamWConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i]->trainable())
        throw UsageError("AdamW: parameter '" + params_[i]->name + "' is not trainable");
      m_[i].assign(params_[i]->numel(), T(0));
      v_[i].assign(params_[i]->numel(), T(0));
    }
    last_backward_seen_ = backward_epoch();
  }

  // One update using the gradients accumulated by the latest backward().
  // Grads are zeroed afterwards so the next forward/backward starts clean.
  void step(double lr) {
    if (backward_epoch() == last_backward_seen_)
      throw UsageError("AdamW: step() without a new backward() since the last step");
    last_backward_seen_ = backward_epoch();
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      T* w = p.value.ptr();
      T* g = p.value.gptr();
      T* m = m_[i].data();
      T* v = v_[i].data();
      const int64_t n = p.numel();
      for (int64_t j = 0; j < n; ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        double wj = static_cast<double>(w[j]);
        wj -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * wj);
        w[j] = static_cast<T>(wj);
      }
      p.value.zero_grad();
    }
  }

  int64_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  int64_t t_ = 0;
  int64_t last_backward_seen_ = 0;
};

// Linear warmup to peak_lr, then cosine decay to zero at total_steps.
// lr(warmup_steps) == peak_lr exactly; steps past the end clamp to zero
// (warned once, since it usually means a mis-sized schedule).
class CosineSchedule {
 public:
  CosineSchedule(double peak_lr, int64_t total_steps, int64_t warmup_steps = 0)
      : peak_(peak_lr), total_(total_steps), warmup_(warmup_steps) {
    if (total_steps <= 0) throw UsageError("CosineSchedule: total_steps must be positive");
    if (warmup_steps < 0 || warmup_steps > total_steps)
      throw UsageError("CosineSchedule: warmup_steps outside [0, total_steps]");
  }

  double lr_at(int64_t step) const {
    if (step < 0) throw UsageError("CosineSchedule: negative step");
    if (step > total_) {
      if (!warned_) {
        std::fprintf(stderr, "[schedule] step %lld past total_steps %lld; lr clamped to 0\n",
                     static_cast<long long>(step), static_cast<long long>(total_));
        warned_ = true;
      }
      return 0.0;
    }
    if (warmup_ > 0 && step < warmup_) return peak_ * static_cast<double>(step) / static_cast<double>(warmup_);
    const double span = static_cast<double>(total_ - warmup_);
    const double progress = span > 0 ? static_cast<double>(step - warmup_) / span : 1.0;
    return 0.5 * peak_ * (1.0 + std::cos(M_PI * progress));
  }

 private:
  double peak_;
  int64_t total_;
  int64_t warmup_;
  mutable bool warned_ = false;
};

}  // namespace dfallm::nn

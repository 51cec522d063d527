#pragma once

// Gradient verification against central finite differences. The FD side is
// the oracle: it never touches the backward pass. f64 graphs are checked
// directly; f32 graphs are checked by evaluating the FD on an f64 twin of the
// model synced to the exact same weight values (f32 FD at h=1e-5 would drown
// in rounding).

#include <cmath>
#include <string>
#include <vector>

#include "dfallm/nn/param.hpp"
#include "dfallm/nn/tensor.hpp"

namespace dfallm::nn {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  int64_t n_checked = 0;
};

namespace detail {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

template <class T, class F>
double eval_scalar(F&& loss_fn) {
  NoGradGuard ng;
  Tensor<T> t = loss_fn();
  return static_cast<double>(t.item());
}

}  // namespace detail

// Analytic grads of `loss_fn` w.r.t. `params` vs central differences in the
// same precision. Use with T=double (tolerance 1e-6); the forward graph is
// rebuilt by loss_fn on every evaluation.
template <class T, class F>
GradCheckResult grad_check(const std::vector<Parameter<T>*>& params, F&& loss_fn, double fd_h = 1e-5) {
  for (auto* p : params) p->value.zero_grad();
  Tensor<T> loss = loss_fn();
  backward(loss);
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(*p->value.grad);

  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& w = *params[pi]->value.data;
    for (size_t j = 0; j < w.size(); ++j) {
      const T saved = w[j];
      w[j] = saved + static_cast<T>(fd_h);
      const double fp = detail::eval_scalar<T>(loss_fn);
      w[j] = saved - static_cast<T>(fd_h);
      const double fm = detail::eval_scalar<T>(loss_fn);
      w[j] = saved;
      const double fd = (fp - fm) / (2.0 * fd_h);
      const double a = static_cast<double>(analytic[pi][j]);
      const double re = detail::rel_err(a, fd);
      ++res.n_checked;
      if (re > res.max_rel_err) {
        res.max_rel_err = re;
        res.max_abs_err = std::abs(a - fd);
        res.worst_param = params[pi]->name;
        res.worst_index = static_cast<int64_t>(j);
      }
    }
  }
  return res;
}

// Copies f32 parameter values into an aligned f64 twin, exactly (float->double
// is lossless), so both models sit at the same point in weight space.
inline void sync_f64_twin(const std::vector<Parameter<float>*>& p32,
                          const std::vector<Parameter<double>*>& p64) {
  if (p32.size() != p64.size()) throw UsageError("sync_f64_twin: parameter lists differ in length");
  for (size_t i = 0; i < p32.size(); ++i) {
    if (p32[i]->value.shape != p64[i]->value.shape)
      throw UsageError("sync_f64_twin: shape mismatch at '" + p32[i]->name + "'");
    auto& src = *p32[i]->value.data;
    auto& dst = *p64[i]->value.data;
    for (size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<double>(src[j]);
  }
}

// Analytic f32 grads vs f64 central differences on a synced twin model.
// loss32/loss64 must implement the same function of their respective params.
template <class F32, class F64>
GradCheckResult grad_check_f32(const std::vector<Parameter<float>*>& p32, F32&& loss32,
                               const std::vector<Parameter<double>*>& p64, F64&& loss64,
                               double fd_h = 1e-5) {
  sync_f64_twin(p32, p64);
  for (auto* p : p32) p->value.zero_grad();
  Tensor<float> loss = loss32();
  backward(loss);

  GradCheckResult res;
  for (size_t pi = 0; pi < p64.size(); ++pi) {
    auto& w = *p64[pi]->value.data;
    const auto& analytic = *p32[pi]->value.grad;
    for (size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      w[j] = saved + fd_h;
      const double fp = detail::eval_scalar<double>(loss64);
      w[j] = saved - fd_h;
      const double fm = detail::eval_scalar<double>(loss64);
      w[j] = saved;
      const double fd = (fp - fm) / (2.0 * fd_h);
      const double a = static_cast<double>(analytic[j]);
      const double re = detail::rel_err(a, fd);
      ++res.n_checked;
      if (re > res.max_rel_err) {
        res.max_rel_err = re;
        res.max_abs_err = std::abs(a - fd);
        res.worst_param = p64[pi]->name;
        res.worst_index = static_cast<int64_t>(j);
      }
    }
  }
  return res;
}

}  // namespace dfallm::nn

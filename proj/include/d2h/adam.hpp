#pragma once

#include <cmath>
#include <vector>

#include "d2h/tensor.hpp"

namespace d2h {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter Adam moments plus a shared step counter.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  int64_t step = 0;

  void init(const std::vector<Tensor<T>>& params) {
    m.clear(); v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.n, p.c, p.h, p.w);
      v.emplace_back(p.n, p.c, p.h, p.w);
    }
    step = 0;
  }
};

/// One bias-corrected Adam update, in place.
template <typename T>
void adam_step(std::vector<Tensor<T>*>& params,
               const std::vector<const Tensor<T>*>& grads, AdamState<T>& st,
               const AdamConfig& cfg) {
  require(params.size() == grads.size() && params.size() == st.m.size(),
          "adam_step: parameter/gradient/state count mismatch");
  st.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const Tensor<T>& g = *grads[i];
    require_same_shape(p, g, "adam_step");
    Tensor<T>& m = st.m[i];
    Tensor<T>& v = st.v[i];
    for (size_t j = 0; j < p.size(); ++j) {
      double gj = g.data[j];
      double mj = cfg.beta1 * m.data[j] + (1.0 - cfg.beta1) * gj;
      double vj = cfg.beta2 * v.data[j] + (1.0 - cfg.beta2) * gj * gj;
      m.data[j] = static_cast<T>(mj);
      v.data[j] = static_cast<T>(vj);
      double mhat = mj / bc1, vhat = vj / bc2;
      p.data[j] = static_cast<T>(p.data[j] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace d2h

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "d2h/rng.hpp"
#include "d2h/tape.hpp"

namespace d2h {

struct GradCheckReport {
  std::vector<double> max_rel_err;   // per input
  std::vector<std::string> notes;    // per input, empty when clean
  double worst = 0.0;
  bool kink_suspected = false;
};

/// Compares reverse-mode gradients against central finite differences for a
/// scalar-valued graph f(tape, input_ids). Double precision only; h default
/// 1e-6. A large discrepancy paired with a large second difference is
/// reported as a suspected non-differentiable point rather than silently
/// folded into the error.
inline GradCheckReport gradient_check(
    const std::function<TapeD::Id(TapeD&, const std::vector<TapeD::Id>&)>& f,
    const std::vector<TensorD>& inputs, double h = 1e-6) {
  GradCheckReport rep;
  // Analytic pass.
  TapeD tape;
  std::vector<TapeD::Id> ids;
  for (const auto& in : inputs) ids.push_back(tape.leaf(in, true));
  TapeD::Id root = f(tape, ids);
  tape.backward(root);
  std::vector<TensorD> analytic;
  for (auto id : ids) analytic.push_back(tape.grad(id));

  auto eval = [&](const std::vector<TensorD>& xs) {
    TapeD t;
    std::vector<TapeD::Id> lids;
    for (const auto& x : xs) lids.push_back(t.leaf(x, false));
    return t.value(f(t, lids)).data[0];
  };

  for (size_t i = 0; i < inputs.size(); ++i) {
    double worst = 0.0;
    std::string note;
    std::vector<TensorD> xs = inputs;
    for (size_t j = 0; j < inputs[i].size(); ++j) {
      double orig = xs[i].data[j];
      xs[i].data[j] = orig + h;
      double fp = eval(xs);
      xs[i].data[j] = orig - h;
      double fm = eval(xs);
      xs[i].data[j] = orig;
      double fd = (fp - fm) / (2 * h);
      double an = analytic[i].data[j];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      double rel = std::abs(fd - an) / denom;
      if (rel > worst) worst = rel;
      if (rel > 0.1) {
        // Second difference blows up at |.|-style kinks.
        double f0 = eval(xs);
        double curv = std::abs(fp - 2 * f0 + fm) / (h * h);
        if (curv > 1.0 / h) {
          note = "possible non-differentiable point at input " +
                 std::to_string(i) + " element " + std::to_string(j);
          rep.kink_suspected = true;
        }
      }
    }
    rep.max_rel_err.push_back(worst);
    rep.notes.push_back(note);
    rep.worst = std::max(rep.worst, worst);
  }
  return rep;
}

/// Uniform tensor in [lo, hi) from a named stream.
inline TensorD random_tensor(Rng& rng, int n, int c, int h, int w,
                             double lo = -1.0, double hi = 1.0) {
  TensorD t(n, c, h, w);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace d2h

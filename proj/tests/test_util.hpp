#pragma once

#include <cmath>

#include "d2h/rng.hpp"
#include "d2h/tensor.hpp"

namespace testutil {

using d2h::Tensor;

template <typename T>
Tensor<T> rand_tensor(d2h::Rng& rng, int n, int c, int h, int w, double lo = -1,
                      double hi = 1) {
  Tensor<T> t(n, c, h, w);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Direct 6-loop cross-correlation with zero padding; the independent oracle
/// for conv2d.
template <typename T>
Tensor<T> naive_conv(const Tensor<T>& x, const Tensor<T>& w,
                     const std::vector<T>& bias, int stride, int pad,
                     int dilation) {
  int oh = (x.h + 2 * pad - dilation * (w.h - 1) - 1) / stride + 1;
  int ow = (x.w + 2 * pad - dilation * (w.w - 1) - 1) / stride + 1;
  Tensor<T> out(x.n, w.n, oh, ow);
  for (int in = 0; in < x.n; ++in)
    for (int co = 0; co < w.n; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias[co];
          for (int ci = 0; ci < x.c; ++ci)
            for (int ky = 0; ky < w.h; ++ky)
              for (int kx = 0; kx < w.w; ++kx)
                acc += w.at(co, ci, ky, kx) *
                       x.at_pad(in, ci, oy * stride - pad + ky * dilation,
                                ox * stride - pad + kx * dilation);
          out.at(in, co, oy, ox) = static_cast<T>(acc);
        }
  return out;
}

/// Standalone scalar bilinear read with zero padding, independent of the
/// tape implementation.
template <typename T>
double oracle_bilinear(const Tensor<T>& t, int n, int c, double sy, double sx) {
  int y0 = static_cast<int>(std::floor(sy));
  int x0 = static_cast<int>(std::floor(sx));
  double fy = sy - y0, fx = sx - x0;
  auto rd = [&](int y, int x) -> double {
    if (y < 0 || y >= t.h || x < 0 || x >= t.w) return 0.0;
    return t.at(n, c, y, x);
  };
  return (1 - fy) * ((1 - fx) * rd(y0, x0) + fx * rd(y0, x0 + 1)) +
         fy * ((1 - fx) * rd(y0 + 1, x0) + fx * rd(y0 + 1, x0 + 1));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
  return m;
}

}  // namespace testutil

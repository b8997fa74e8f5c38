#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "d2h/tensor.hpp"

namespace d2h {

/// 10*log10(peak^2 / MSE); +inf when the images are identical.
template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0) {
  require_same_shape(x, y, "psnr");
  double mse = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double d = static_cast<double>(x.data[i]) - y.data[i];
    mse += d * d;
  }
  mse /= x.size();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

/// Mean local SSIM, 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03,
/// computed per channel on the valid (fully covered) region and averaged.
template <typename T>
double ssim(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0) {
  require_same_shape(x, y, "ssim");
  constexpr int R = 5;  // 11x11 window
  static const std::vector<double> g = [] {
    std::vector<double> k(11);
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
      k[i] = std::exp(-0.5 * (i - R) * (i - R) / (1.5 * 1.5));
      sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
  }();
  const double c1 = 0.01 * 0.01 * peak * peak;
  const double c2 = 0.03 * 0.03 * peak * peak;
  require(x.h >= 11 && x.w >= 11, "ssim: image smaller than the 11x11 window");

  double total = 0.0;
  int64_t count = 0;
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic) {
      // Separable Gaussian of the five needed moment maps.
      const int h = x.h, w = x.w;
      auto blur = [&](auto&& f) {
        std::vector<double> tmp(static_cast<size_t>(h) * w, 0.0);
        for (int yy = 0; yy < h; ++yy)
          for (int xx = R; xx < w - R; ++xx) {
            double acc = 0;
            for (int k = -R; k <= R; ++k) acc += g[k + R] * f(yy, xx + k);
            tmp[static_cast<size_t>(yy) * w + xx] = acc;
          }
        std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
        for (int yy = R; yy < h - R; ++yy)
          for (int xx = R; xx < w - R; ++xx) {
            double acc = 0;
            for (int k = -R; k <= R; ++k)
              acc += g[k + R] * tmp[static_cast<size_t>(yy + k) * w + xx];
            out[static_cast<size_t>(yy) * w + xx] = acc;
          }
        return out;
      };
      auto X = [&](int yy, int xx) { return static_cast<double>(x.at(in, ic, yy, xx)); };
      auto Y = [&](int yy, int xx) { return static_cast<double>(y.at(in, ic, yy, xx)); };
      auto mu_x = blur(X);
      auto mu_y = blur(Y);
      auto xx2 = blur([&](int yy, int xx) { return X(yy, xx) * X(yy, xx); });
      auto yy2 = blur([&](int yy, int xx) { return Y(yy, xx) * Y(yy, xx); });
      auto xy = blur([&](int yy, int xx) { return X(yy, xx) * Y(yy, xx); });
      for (int yy = R; yy < h - R; ++yy)
        for (int xx = R; xx < w - R; ++xx) {
          size_t i = static_cast<size_t>(yy) * w + xx;
          double mx = mu_x[i], my = mu_y[i];
          double vx = xx2[i] - mx * mx;
          double vy = yy2[i] - my * my;
          double cxy = xy[i] - mx * my;
          double s = ((2 * mx * my + c1) * (2 * cxy + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
          total += s;
          ++count;
        }
    }
  return total / count;
}

}  // namespace d2h

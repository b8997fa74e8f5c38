#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2h {

/// Dense NCHW tensor, row-major with W fastest. The single carrier type for
/// images, feature maps and network parameters (parameters reinterpret the
/// four extents as C_out x C_in x k_h x k_w).
template <typename T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_) {
    if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
      throw std::invalid_argument("Tensor: all extents must be >= 1, got " +
                                  shape_str());
    data.assign(static_cast<size_t>(n_) * c_ * h_ * w_, T(0));
  }

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }

  static Tensor full(int n, int c, int h, int w, T v) {
    Tensor t(n, c, h, w);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  size_t size() const { return data.size(); }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::string shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }

  size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
  }

  T& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  T at(int in, int ic, int iy, int ix) const {
    return data[index(in, ic, iy, ix)];
  }

  /// Zero-padded read; out-of-bounds coordinates yield 0.
  T at_pad(int in, int ic, int iy, int ix) const {
    if (iy < 0 || iy >= h || ix < 0 || ix >= w) return T(0);
    return data[index(in, ic, iy, ix)];
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> r;
    r.n = n; r.c = c; r.h = h; r.w = w;
    r.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i)
      r.data[i] = static_cast<U>(data[i]);
    return r;
  }

  Tensor& clamp_(T lo, T hi) {
    for (T& v : data) v = v < lo ? lo : (v > hi ? hi : v);
    return *this;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                               const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

template <typename T>
inline void require_finite(const Tensor<T>& t, const char* where) {
  if (!t.all_finite())
    throw std::invalid_argument(std::string(where) +
                                ": non-finite values in input");
}

}  // namespace d2h

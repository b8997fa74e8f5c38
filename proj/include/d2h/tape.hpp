#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "d2h/parallel.hpp"
#include "d2h/tensor.hpp"

namespace d2h {

struct ConvSpec {
  int stride = 1;
  int pad = 1;
  int dilation = 1;
};

namespace detail {

/// Bilinear read with zero outside the image. Matches the zero-padding
/// convention of the convolutions.
template <typename T>
inline T bilinear_sample(const Tensor<T>& t, int in, int ic, double sy, double sx) {
  int y0 = static_cast<int>(std::floor(sy));
  int x0 = static_cast<int>(std::floor(sx));
  double fy = sy - y0, fx = sx - x0;
  T v00 = t.at_pad(in, ic, y0, x0);
  T v01 = t.at_pad(in, ic, y0, x0 + 1);
  T v10 = t.at_pad(in, ic, y0 + 1, x0);
  T v11 = t.at_pad(in, ic, y0 + 1, x0 + 1);
  return static_cast<T>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                        fy * ((1 - fx) * v10 + fx * v11));
}

// Orthonormal 2x2 Haar analysis: one output row per subband LL,LH,HL,HH.
// The matrix is symmetric and involutory, so synthesis reuses it.
inline constexpr double kHaar[4][4] = {
    {0.5, 0.5, 0.5, 0.5},
    {0.5, -0.5, 0.5, -0.5},
    {0.5, 0.5, -0.5, -0.5},
    {0.5, -0.5, -0.5, 0.5},
};

}  // namespace detail

/// Reverse-mode tape over the fixed D2HNet op set. Node values are immutable
/// once created; backward() walks creation order in reverse, which is a
/// topological order by construction. One tape per forward/backward pass.
template <typename T>
class Tape {
 public:
  using Id = int;

  Id leaf(Tensor<T> v, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(v), {}, requires_grad, nullptr});
    return static_cast<Id>(nodes_.size() - 1);
  }

  const Tensor<T>& value(Id id) const { return nodes_[id].value; }

  /// Gradient of the last backward() root w.r.t. node id (zeros if untouched).
  const Tensor<T>& grad(Id id) {
    materialize_grad(id);
    return nodes_[id].grad;
  }

  void backward(Id root) {
    const Tensor<T>& rv = nodes_[root].value;
    require(rv.size() == 1, "backward: root must be scalar");
    materialize_grad(root);
    nodes_[root].grad.data[0] = T(1);
    for (Id id = root; id >= 0; --id)
      if (nodes_[id].backward && nodes_[id].requires_grad) nodes_[id].backward();
  }

  size_t node_count() const { return nodes_.size(); }

  // ---- ops -------------------------------------------------------------

  Id conv2d(Id x, Id w, Id b, ConvSpec sp = {}) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(b);
    require(wv.c == xv.c, "conv2d: weight C_in " + std::to_string(wv.c) +
                              " != input C " + std::to_string(xv.c));
    require(bv.c == wv.n && bv.size() == static_cast<size_t>(wv.n),
            "conv2d: bias length != C_out");
    require(sp.stride >= 1 && sp.pad >= 0 && sp.dilation >= 1,
            "conv2d: bad stride/pad/dilation");
    const int kh = wv.h, kw = wv.w;
    const int oh = (xv.h + 2 * sp.pad - sp.dilation * (kh - 1) - 1) / sp.stride + 1;
    const int ow = (xv.w + 2 * sp.pad - sp.dilation * (kw - 1) - 1) / sp.stride + 1;
    require(oh >= 1 && ow >= 1, "conv2d: empty output");

    Tensor<T> out(xv.n, wv.n, oh, ow);
    parallel_for(static_cast<int64_t>(xv.n) * wv.n * oh, [&](int64_t lo, int64_t hi) {
      for (int64_t r = lo; r < hi; ++r) {
        int oy = static_cast<int>(r % oh);
        int co = static_cast<int>((r / oh) % wv.n);
        int in = static_cast<int>(r / (static_cast<int64_t>(oh) * wv.n));
        for (int ox = 0; ox < ow; ++ox) {
          T acc = bv.data[co];
          for (int ci = 0; ci < xv.c; ++ci)
            for (int ky = 0; ky < kh; ++ky) {
              int iy = oy * sp.stride - sp.pad + ky * sp.dilation;
              if (iy < 0 || iy >= xv.h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                int ix = ox * sp.stride - sp.pad + kx * sp.dilation;
                if (ix < 0 || ix >= xv.w) continue;
                acc += wv.at(co, ci, ky, kx) * xv.at(in, ci, iy, ix);
              }
            }
          out.at(in, co, oy, ox) = acc;
        }
      }
    });

    Id id = make_node(std::move(out), {x, w, b});
    nodes_[id].backward = [this, id, x, w, b, sp, kh, kw]() {
      const Tensor<T>& go = nodes_[id].grad;
      const Tensor<T>& xv = value(x);
      const Tensor<T>& wv = value(w);
      if (nodes_[x].requires_grad) {
        materialize_grad(x);
        Tensor<T>& gx = nodes_[x].grad;
        // Gather form (transposed conv) so each input element is owned by
        // one worker.
        parallel_for(static_cast<int64_t>(xv.n) * xv.c * xv.h, [&](int64_t lo, int64_t hi) {
          for (int64_t r = lo; r < hi; ++r) {
            int iy = static_cast<int>(r % xv.h);
            int ci = static_cast<int>((r / xv.h) % xv.c);
            int in = static_cast<int>(r / (static_cast<int64_t>(xv.h) * xv.c));
            for (int ix = 0; ix < xv.w; ++ix) {
              T acc = T(0);
              for (int co = 0; co < wv.n; ++co)
                for (int ky = 0; ky < kh; ++ky) {
                  int num_y = iy + sp.pad - ky * sp.dilation;
                  if (num_y < 0 || num_y % sp.stride) continue;
                  int oy = num_y / sp.stride;
                  if (oy >= go.h) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    int num_x = ix + sp.pad - kx * sp.dilation;
                    if (num_x < 0 || num_x % sp.stride) continue;
                    int ox = num_x / sp.stride;
                    if (ox >= go.w) continue;
                    acc += wv.at(co, ci, ky, kx) * go.at(in, co, oy, ox);
                  }
                }
              gx.at(in, ci, iy, ix) += acc;
            }
          }
        });
      }
      if (nodes_[w].requires_grad) {
        materialize_grad(w);
        Tensor<T>& gw = nodes_[w].grad;
        parallel_for(static_cast<int64_t>(wv.n) * wv.c, [&](int64_t lo, int64_t hi) {
          for (int64_t r = lo; r < hi; ++r) {
            int ci = static_cast<int>(r % wv.c);
            int co = static_cast<int>(r / wv.c);
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                T acc = T(0);
                for (int in = 0; in < xv.n; ++in)
                  for (int oy = 0; oy < go.h; ++oy) {
                    int iy = oy * sp.stride - sp.pad + ky * sp.dilation;
                    if (iy < 0 || iy >= xv.h) continue;
                    for (int ox = 0; ox < go.w; ++ox) {
                      int ix = ox * sp.stride - sp.pad + kx * sp.dilation;
                      if (ix < 0 || ix >= xv.w) continue;
                      acc += go.at(in, co, oy, ox) * xv.at(in, ci, iy, ix);
                    }
                  }
                gw.at(co, ci, ky, kx) += acc;
              }
          }
        });
      }
      if (nodes_[b].requires_grad) {
        materialize_grad(b);
        Tensor<T>& gb = nodes_[b].grad;
        for (int co = 0; co < wv.n; ++co) {
          T acc = T(0);
          for (int in = 0; in < go.n; ++in)
            for (int oy = 0; oy < go.h; ++oy)
              for (int ox = 0; ox < go.w; ++ox) acc += go.at(in, co, oy, ox);
          gb.data[co] += acc;
        }
      }
    };
    return id;
  }

  /// Modulated deformable convolution (stride 1, dilation 1, same padding).
  /// offsets: N x 2K x H x W with (dy, dx) interleaved per tap; mask: N x K x H x W.
  Id deform_conv2d(Id x, Id w, Id b, Id offsets, Id mask) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(b);
    const Tensor<T>& ov = value(offsets);
    const Tensor<T>& mv = value(mask);
    const int kh = wv.h, kw = wv.w, K = kh * kw;
    require(wv.c == xv.c, "deform_conv2d: weight C_in mismatch");
    require(bv.size() == static_cast<size_t>(wv.n), "deform_conv2d: bad bias");
    require(ov.n == xv.n && ov.h == xv.h && ov.w == xv.w,
            "deform_conv2d: offsets not aligned with input");
    require(ov.c == 2 * K, "deform_conv2d: offsets C != 2K");
    require(mv.n == xv.n && mv.c == K && mv.h == xv.h && mv.w == xv.w,
            "deform_conv2d: mask shape mismatch");
    require_finite(ov, "deform_conv2d offsets");
    const int ph = kh / 2, pw = kw / 2;

    Tensor<T> out(xv.n, wv.n, xv.h, xv.w);
    parallel_for(static_cast<int64_t>(xv.n) * wv.n * xv.h, [&](int64_t lo, int64_t hi) {
      for (int64_t r = lo; r < hi; ++r) {
        int y = static_cast<int>(r % xv.h);
        int co = static_cast<int>((r / xv.h) % wv.n);
        int in = static_cast<int>(r / (static_cast<int64_t>(xv.h) * wv.n));
        for (int xx = 0; xx < xv.w; ++xx) {
          T acc = bv.data[co];
          for (int k = 0; k < K; ++k) {
            int ky = k / kw, kx = k % kw;
            double sy = y + ky - ph + static_cast<double>(ov.at(in, 2 * k, y, xx));
            double sx = xx + kx - pw + static_cast<double>(ov.at(in, 2 * k + 1, y, xx));
            T m = mv.at(in, k, y, xx);
            for (int ci = 0; ci < xv.c; ++ci)
              acc += wv.at(co, ci, ky, kx) *
                     detail::bilinear_sample(xv, in, ci, sy, sx) * m;
          }
          out.at(in, co, y, xx) = acc;
        }
      }
    });

    Id id = make_node(std::move(out), {x, w, b, offsets, mask});
    nodes_[id].backward = [this, id, x, w, b, offsets, mask, kh, kw, K, ph, pw]() {
      const Tensor<T>& go = nodes_[id].grad;
      const Tensor<T>& xv = value(x);
      const Tensor<T>& wv = value(w);
      const Tensor<T>& ov = value(offsets);
      const Tensor<T>& mv = value(mask);
      bool need_x = nodes_[x].requires_grad;
      bool need_w = nodes_[w].requires_grad;
      bool need_b = nodes_[b].requires_grad;
      bool need_o = nodes_[offsets].requires_grad;
      bool need_m = nodes_[mask].requires_grad;
      if (need_x) materialize_grad(x);
      if (need_w) materialize_grad(w);
      if (need_b) materialize_grad(b);
      if (need_o) materialize_grad(offsets);
      if (need_m) materialize_grad(mask);
      // Serial scatter: the x gradient lands on overlapping bilinear
      // footprints, so a fixed loop order is the determinism guarantee here.
      for (int in = 0; in < xv.n; ++in)
        for (int co = 0; co < wv.n; ++co)
          for (int y = 0; y < xv.h; ++y)
            for (int xx = 0; xx < xv.w; ++xx) {
              T g = go.at(in, co, y, xx);
              if (g == T(0)) continue;
              if (need_b) nodes_[b].grad.data[co] += g;
              for (int k = 0; k < K; ++k) {
                int ky = k / kw, kx = k % kw;
                double sy = y + ky - ph + static_cast<double>(ov.at(in, 2 * k, y, xx));
                double sx = xx + kx - pw + static_cast<double>(ov.at(in, 2 * k + 1, y, xx));
                T m = mv.at(in, k, y, xx);
                int y0 = static_cast<int>(std::floor(sy));
                int x0 = static_cast<int>(std::floor(sx));
                double fy = sy - y0, fx = sx - x0;
                for (int ci = 0; ci < xv.c; ++ci) {
                  T wk = wv.at(co, ci, ky, kx);
                  T v00 = xv.at_pad(in, ci, y0, x0);
                  T v01 = xv.at_pad(in, ci, y0, x0 + 1);
                  T v10 = xv.at_pad(in, ci, y0 + 1, x0);
                  T v11 = xv.at_pad(in, ci, y0 + 1, x0 + 1);
                  T val = static_cast<T>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                         fy * ((1 - fx) * v10 + fx * v11));
                  if (need_w) nodes_[w].grad.at(co, ci, ky, kx) += g * val * m;
                  if (need_m) nodes_[mask].grad.at(in, k, y, xx) += g * wk * val;
                  T gv = g * wk * m;
                  if (need_x) {
                    Tensor<T>& gx = nodes_[x].grad;
                    auto scatter = [&](int yy, int xc, double wgt) {
                      if (yy >= 0 && yy < xv.h && xc >= 0 && xc < xv.w)
                        gx.at(in, ci, yy, xc) += static_cast<T>(gv * wgt);
                    };
                    scatter(y0, x0, (1 - fy) * (1 - fx));
                    scatter(y0, x0 + 1, (1 - fy) * fx);
                    scatter(y0 + 1, x0, fy * (1 - fx));
                    scatter(y0 + 1, x0 + 1, fy * fx);
                  }
                  if (need_o) {
                    double dvdy = (1 - fx) * (v10 - v00) + fx * (v11 - v01);
                    double dvdx = (1 - fy) * (v01 - v00) + fy * (v11 - v10);
                    nodes_[offsets].grad.at(in, 2 * k, y, xx) += static_cast<T>(gv * dvdy);
                    nodes_[offsets].grad.at(in, 2 * k + 1, y, xx) += static_cast<T>(gv * dvdx);
                  }
                }
              }
            }
    };
    return id;
  }

  /// Orthonormal Haar analysis, N x C x H x W -> N x 4C x H/2 x W/2.
  /// Output channel 4*ic + s holds subband s (LL, LH, HL, HH) of channel ic.
  Id dwt2(Id x) {
    const Tensor<T>& xv = value(x);
    require(xv.h % 2 == 0 && xv.w % 2 == 0,
            "dwt2: spatial extents must be even, got " + xv.shape_str());
    Tensor<T> out(xv.n, 4 * xv.c, xv.h / 2, xv.w / 2);
    haar_analysis(xv, out);
    Id id = make_node(std::move(out), {x});
    nodes_[id].backward = [this, id, x]() {
      if (!nodes_[x].requires_grad) return;
      materialize_grad(x);
      // Orthonormal transform: the adjoint is the synthesis.
      Tensor<T> gx(nodes_[x].value.n, nodes_[x].value.c, nodes_[x].value.h,
                   nodes_[x].value.w);
      haar_synthesis(nodes_[id].grad, gx);
      for (size_t i = 0; i < gx.size(); ++i) nodes_[x].grad.data[i] += gx.data[i];
    };
    return id;
  }

  /// Inverse of dwt2, N x 4C x H x W -> N x C x 2H x 2W.
  Id idwt2(Id x) {
    const Tensor<T>& xv = value(x);
    require(xv.c % 4 == 0, "idwt2: C must be divisible by 4");
    Tensor<T> out(xv.n, xv.c / 4, xv.h * 2, xv.w * 2);
    haar_synthesis(xv, out);
    Id id = make_node(std::move(out), {x});
    nodes_[id].backward = [this, id, x]() {
      if (!nodes_[x].requires_grad) return;
      materialize_grad(x);
      Tensor<T> gx(nodes_[x].value.n, nodes_[x].value.c, nodes_[x].value.h,
                   nodes_[x].value.w);
      haar_analysis(nodes_[id].grad, gx);
      for (size_t i = 0; i < gx.size(); ++i) nodes_[x].grad.data[i] += gx.data[i];
    };
    return id;
  }

  /// Bilinear resize, align-corners-false (pixel centers at half offsets),
  /// border replicated.
  Id bilinear_resize(Id x, int oh, int ow) {
    const Tensor<T>& xv = value(x);
    require(oh >= 1 && ow >= 1, "bilinear_resize: bad target size");
    double ry = static_cast<double>(xv.h) / oh;
    double rx = static_cast<double>(xv.w) / ow;
    Tensor<T> out(xv.n, xv.c, oh, ow);
    parallel_for(static_cast<int64_t>(xv.n) * xv.c * oh, [&](int64_t lo, int64_t hi) {
      for (int64_t r = lo; r < hi; ++r) {
        int oy = static_cast<int>(r % oh);
        int ic = static_cast<int>((r / oh) % xv.c);
        int in = static_cast<int>(r / (static_cast<int64_t>(oh) * xv.c));
        double sy = (oy + 0.5) * ry - 0.5;
        int y0; double fy;
        resize_coord(sy, xv.h, y0, fy);
        for (int ox = 0; ox < ow; ++ox) {
          double sx = (ox + 0.5) * rx - 0.5;
          int x0; double fx;
          resize_coord(sx, xv.w, x0, fx);
          int y1 = std::min(y0 + 1, xv.h - 1), x1 = std::min(x0 + 1, xv.w - 1);
          out.at(in, ic, oy, ox) = static_cast<T>(
              (1 - fy) * ((1 - fx) * xv.at(in, ic, y0, x0) + fx * xv.at(in, ic, y0, x1)) +
              fy * ((1 - fx) * xv.at(in, ic, y1, x0) + fx * xv.at(in, ic, y1, x1)));
        }
      }
    });
    Id id = make_node(std::move(out), {x});
    nodes_[id].backward = [this, id, x, oh, ow, ry, rx]() {
      if (!nodes_[x].requires_grad) return;
      materialize_grad(x);
      const Tensor<T>& go = nodes_[id].grad;
      const Tensor<T>& xv = value(x);
      Tensor<T>& gx = nodes_[x].grad;
      for (int in = 0; in < xv.n; ++in)
        for (int ic = 0; ic < xv.c; ++ic)
          for (int oy = 0; oy < oh; ++oy) {
            double sy = (oy + 0.5) * ry - 0.5;
            int y0; double fy;
            resize_coord(sy, xv.h, y0, fy);
            int y1 = std::min(y0 + 1, xv.h - 1);
            for (int ox = 0; ox < ow; ++ox) {
              double sx = (ox + 0.5) * rx - 0.5;
              int x0; double fx;
              resize_coord(sx, xv.w, x0, fx);
              int x1 = std::min(x0 + 1, xv.w - 1);
              T g = go.at(in, ic, oy, ox);
              gx.at(in, ic, y0, x0) += static_cast<T>(g * (1 - fy) * (1 - fx));
              gx.at(in, ic, y0, x1) += static_cast<T>(g * (1 - fy) * fx);
              gx.at(in, ic, y1, x0) += static_cast<T>(g * fy * (1 - fx));
              gx.at(in, ic, y1, x1) += static_cast<T>(g * fy * fx);
            }
          }
    };
    return id;
  }

  Id leaky_relu(Id x, T slope) {
    const Tensor<T>& xv = value(x);
    Tensor<T> out = xv;
    for (T& v : out.data)
      if (v < T(0)) v *= slope;
    Id id = make_node(std::move(out), {x});
    nodes_[id].backward = [this, id, x, slope]() {
      if (!nodes_[x].requires_grad) return;
      materialize_grad(x);
      const Tensor<T>& xv = value(x);
      const Tensor<T>& go = nodes_[id].grad;
      Tensor<T>& gx = nodes_[x].grad;
      for (size_t i = 0; i < xv.size(); ++i)
        gx.data[i] += go.data[i] * (xv.data[i] >= T(0) ? T(1) : slope);
    };
    return id;
  }

  Id sigmoid(Id x) {
    Tensor<T> out = value(x);
    for (T& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    Id id = make_node(std::move(out), {x});
    nodes_[id].backward = [this, id, x]() {
      if (!nodes_[x].requires_grad) return;
      materialize_grad(x);
      const Tensor<T>& yv = nodes_[id].value;
      const Tensor<T>& go = nodes_[id].grad;
      Tensor<T>& gx = nodes_[x].grad;
      for (size_t i = 0; i < yv.size(); ++i)
        gx.data[i] += go.data[i] * yv.data[i] * (T(1) - yv.data[i]);
    };
    return id;
  }

  Id add(Id a, Id b) {
    require_same_shape(value(a), value(b), "add");
    Tensor<T> out = value(a);
    const Tensor<T>& bv = value(b);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
    Id id = make_node(std::move(out), {a, b});
    nodes_[id].backward = [this, id, a, b]() {
      const Tensor<T>& go = nodes_[id].grad;
      for (Id p : {a, b}) {
        if (!nodes_[p].requires_grad) continue;
        materialize_grad(p);
        Tensor<T>& g = nodes_[p].grad;
        for (size_t i = 0; i < go.size(); ++i) g.data[i] += go.data[i];
      }
    };
    return id;
  }

  Id scale(Id x, T s) {
    Tensor<T> out = value(x);
    for (T& v : out.data) v *= s;
    Id id = make_node(std::move(out), {x});
    nodes_[id].backward = [this, id, x, s]() {
      if (!nodes_[x].requires_grad) return;
      materialize_grad(x);
      const Tensor<T>& go = nodes_[id].grad;
      Tensor<T>& gx = nodes_[x].grad;
      for (size_t i = 0; i < go.size(); ++i) gx.data[i] += go.data[i] * s;
    };
    return id;
  }

  Id concat_channels(const std::vector<Id>& xs) {
    require(!xs.empty(), "concat_channels: empty input list");
    const Tensor<T>& first = value(xs[0]);
    int ctot = 0;
    for (Id x : xs) {
      const Tensor<T>& v = value(x);
      require(v.n == first.n && v.h == first.h && v.w == first.w,
              "concat_channels: spatial/batch mismatch");
      ctot += v.c;
    }
    Tensor<T> out(first.n, ctot, first.h, first.w);
    int coff = 0;
    for (Id x : xs) {
      const Tensor<T>& v = value(x);
      for (int in = 0; in < v.n; ++in)
        for (int ic = 0; ic < v.c; ++ic)
          std::copy(&v.data[v.index(in, ic, 0, 0)],
                    &v.data[v.index(in, ic, 0, 0)] + static_cast<size_t>(v.h) * v.w,
                    &out.data[out.index(in, coff + ic, 0, 0)]);
      coff += v.c;
    }
    Id id = make_node(std::move(out), xs);
    nodes_[id].backward = [this, id, xs]() {
      const Tensor<T>& go = nodes_[id].grad;
      int coff = 0;
      for (Id x : xs) {
        const Tensor<T>& v = value(x);
        if (nodes_[x].requires_grad) {
          materialize_grad(x);
          Tensor<T>& gx = nodes_[x].grad;
          for (int in = 0; in < v.n; ++in)
            for (int ic = 0; ic < v.c; ++ic) {
              const T* src = &go.data[go.index(in, coff + ic, 0, 0)];
              T* dst = &gx.data[gx.index(in, ic, 0, 0)];
              for (int i = 0; i < v.h * v.w; ++i) dst[i] += src[i];
            }
        }
        coff += v.c;
      }
    };
    return id;
  }

  /// Channels [c0, c1) of x as a new node.
  Id slice_channels(Id x, int c0, int c1) {
    const Tensor<T>& xv = value(x);
    require(0 <= c0 && c0 < c1 && c1 <= xv.c, "slice_channels: bad range");
    Tensor<T> out(xv.n, c1 - c0, xv.h, xv.w);
    for (int in = 0; in < xv.n; ++in)
      for (int ic = c0; ic < c1; ++ic)
        std::copy(&xv.data[xv.index(in, ic, 0, 0)],
                  &xv.data[xv.index(in, ic, 0, 0)] + static_cast<size_t>(xv.h) * xv.w,
                  &out.data[out.index(in, ic - c0, 0, 0)]);
    Id id = make_node(std::move(out), {x});
    nodes_[id].backward = [this, id, x, c0, c1]() {
      if (!nodes_[x].requires_grad) return;
      materialize_grad(x);
      const Tensor<T>& go = nodes_[id].grad;
      Tensor<T>& gx = nodes_[x].grad;
      for (int in = 0; in < go.n; ++in)
        for (int ic = c0; ic < c1; ++ic) {
          const T* src = &go.data[go.index(in, ic - c0, 0, 0)];
          T* dst = &gx.data[gx.index(in, ic, 0, 0)];
          for (int i = 0; i < go.h * go.w; ++i) dst[i] += src[i];
        }
    };
    return id;
  }

  /// Mean absolute difference against a constant target; scalar output.
  Id l1_loss(Id pred, const Tensor<T>& target) {
    const Tensor<T>& pv = value(pred);
    require_same_shape(pv, target, "l1_loss");
    double acc = 0.0;
    for (size_t i = 0; i < pv.size(); ++i)
      acc += std::abs(static_cast<double>(pv.data[i]) - target.data[i]);
    Tensor<T> out(1, 1, 1, 1);
    out.data[0] = static_cast<T>(acc / pv.size());
    Id id = make_node(std::move(out), {pred});
    Tensor<T> tgt = target;
    nodes_[id].backward = [this, id, pred, tgt = std::move(tgt)]() {
      if (!nodes_[pred].requires_grad) return;
      materialize_grad(pred);
      const Tensor<T>& pv = value(pred);
      T g = nodes_[id].grad.data[0];
      T inv = g / static_cast<T>(pv.size());
      Tensor<T>& gp = nodes_[pred].grad;
      for (size_t i = 0; i < pv.size(); ++i) {
        T d = pv.data[i] - tgt.data[i];
        gp.data[i] += d > T(0) ? inv : (d < T(0) ? -inv : T(0));
      }
    };
    return id;
  }

  /// Inner product with fixed weights; scalar. Used by the gradient checker
  /// to reduce an arbitrary op output without cancellation.
  Id weighted_sum(Id x, const Tensor<T>& wts) {
    const Tensor<T>& xv = value(x);
    require_same_shape(xv, wts, "weighted_sum");
    double acc = 0.0;
    for (size_t i = 0; i < xv.size(); ++i)
      acc += static_cast<double>(xv.data[i]) * wts.data[i];
    Tensor<T> out(1, 1, 1, 1);
    out.data[0] = static_cast<T>(acc);
    Id id = make_node(std::move(out), {x});
    Tensor<T> wcopy = wts;
    nodes_[id].backward = [this, id, x, wcopy = std::move(wcopy)]() {
      if (!nodes_[x].requires_grad) return;
      materialize_grad(x);
      T g = nodes_[id].grad.data[0];
      Tensor<T>& gx = nodes_[x].grad;
      for (size_t i = 0; i < wcopy.size(); ++i) gx.data[i] += g * wcopy.data[i];
    };
    return id;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Id make_node(Tensor<T> v, const std::vector<Id>& parents) {
    bool rg = false;
    for (Id p : parents) rg = rg || nodes_[p].requires_grad;
    nodes_.push_back(Node{std::move(v), {}, rg, nullptr});
    return static_cast<Id>(nodes_.size() - 1);
  }

  void materialize_grad(Id id) {
    Node& nd = nodes_[id];
    if (nd.grad.size() == 0)
      nd.grad = Tensor<T>(nd.value.n, nd.value.c, nd.value.h, nd.value.w);
  }

  static void resize_coord(double s, int extent, int& i0, double& f) {
    if (s < 0) { i0 = 0; f = 0.0; return; }
    if (s >= extent - 1) { i0 = extent - 1; f = 0.0; return; }
    i0 = static_cast<int>(std::floor(s));
    f = s - i0;
  }

  static void haar_analysis(const Tensor<T>& x, Tensor<T>& out) {
    const int oh = x.h / 2, ow = x.w / 2;
    parallel_for(static_cast<int64_t>(x.n) * x.c, [&](int64_t lo, int64_t hi) {
      for (int64_t r = lo; r < hi; ++r) {
        int ic = static_cast<int>(r % x.c);
        int in = static_cast<int>(r / x.c);
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            double p[4] = {
                static_cast<double>(x.at(in, ic, 2 * oy, 2 * ox)),
                static_cast<double>(x.at(in, ic, 2 * oy, 2 * ox + 1)),
                static_cast<double>(x.at(in, ic, 2 * oy + 1, 2 * ox)),
                static_cast<double>(x.at(in, ic, 2 * oy + 1, 2 * ox + 1))};
            for (int s = 0; s < 4; ++s) {
              double acc = 0.0;
              for (int j = 0; j < 4; ++j) acc += detail::kHaar[s][j] * p[j];
              out.at(in, 4 * ic + s, oy, ox) = static_cast<T>(acc);
            }
          }
      }
    });
  }

  static void haar_synthesis(const Tensor<T>& sub, Tensor<T>& out) {
    const int oh = sub.h, ow = sub.w;
    parallel_for(static_cast<int64_t>(out.n) * out.c, [&](int64_t lo, int64_t hi) {
      for (int64_t r = lo; r < hi; ++r) {
        int ic = static_cast<int>(r % out.c);
        int in = static_cast<int>(r / out.c);
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            double s[4];
            for (int j = 0; j < 4; ++j)
              s[j] = static_cast<double>(sub.at(in, 4 * ic + j, oy, ox));
            for (int p = 0; p < 4; ++p) {
              double acc = 0.0;
              // kHaar is symmetric and involutory: synthesis row p is column p.
              for (int j = 0; j < 4; ++j) acc += detail::kHaar[j][p] * s[j];
              out.at(in, ic, 2 * oy + p / 2, 2 * ox + p % 2) = static_cast<T>(acc);
            }
          }
      }
    });
  }

  std::vector<Node> nodes_;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

// ---- plain (non-differentiable) tensor helpers -------------------------

/// Non-overlapping box average, extents must divide.
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, int factor) {
  require(factor >= 1, "avg_pool: factor must be >= 1");
  require(x.h % factor == 0 && x.w % factor == 0,
          "avg_pool: extents " + x.shape_str() + " not divisible by " +
              std::to_string(factor));
  Tensor<T> out(x.n, x.c, x.h / factor, x.w / factor);
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic)
      for (int oy = 0; oy < out.h; ++oy)
        for (int ox = 0; ox < out.w; ++ox) {
          double acc = 0.0;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx)
              acc += x.at(in, ic, oy * factor + dy, ox * factor + dx);
          out.at(in, ic, oy, ox) = static_cast<T>(acc / (factor * factor));
        }
  return out;
}

/// Area (box-filter) resize to an arbitrary target; exact average of the
/// covered source region. Generalizes avg_pool to non-integer factors.
template <typename T>
Tensor<T> area_resize(const Tensor<T>& x, int oh, int ow) {
  require(oh >= 1 && ow >= 1, "area_resize: bad target");
  Tensor<T> out(x.n, x.c, oh, ow);
  double ry = static_cast<double>(x.h) / oh;
  double rx = static_cast<double>(x.w) / ow;
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic)
      for (int oy = 0; oy < oh; ++oy) {
        double y0 = oy * ry, y1 = (oy + 1) * ry;
        for (int ox = 0; ox < ow; ++ox) {
          double x0 = ox * rx, x1 = (ox + 1) * rx;
          double acc = 0.0, area = 0.0;
          for (int iy = static_cast<int>(y0); iy < std::min(x.h, static_cast<int>(std::ceil(y1))); ++iy) {
            double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
            if (wy <= 0) continue;
            for (int ix = static_cast<int>(x0); ix < std::min(x.w, static_cast<int>(std::ceil(x1))); ++ix) {
              double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
              if (wx <= 0) continue;
              acc += wy * wx * x.at(in, ic, iy, ix);
              area += wy * wx;
            }
          }
          out.at(in, ic, oy, ox) = static_cast<T>(acc / area);
        }
      }
  return out;
}

/// Non-tracked bilinear resize (same convention as the tape op).
template <typename T>
Tensor<T> bilinear_resize_plain(const Tensor<T>& x, int oh, int ow) {
  Tape<T> t;
  auto id = t.leaf(x, false);
  return t.value(t.bilinear_resize(id, oh, ow));
}

}  // namespace d2h

#pragma once

#include <cmath>

#include "d2h/config.hpp"
#include "d2h/rng.hpp"
#include "d2h/synth.hpp"
#include "d2h/tensor.hpp"

namespace d2h {

/// Per-image ISP constants for the unprocess/process round trip. Bayer
/// pattern is RGGB; w_g is fixed to 1.
struct IspParams {
  double gamma = 2.2;
  double wr = 2.0;
  double wb = 1.7;

  void validate() const {
    require(gamma > 0 && wr > 0 && wb > 0, "IspParams: gains/gamma must be positive");
  }
};

/// ISO-indexed sensor noise description. System gain K = k_iso * ISO is
/// signal-referred; read and row noise sigmas are affine in ISO.
struct NoiseParams {
  bool enabled = true;
  double k_iso = 1e-5;
  double r0 = 0.0005, r1 = 1e-6;
  double row0 = 0.0002, row1 = 2e-7;
  double q = 1.0 / 1023.0;
  double iso_long_min = 1000, iso_long_max = 4000;
  double iso_short_min = 6400, iso_short_max = 12800;
  double wr_min = 1.9, wr_max = 2.4;
  double wb_min = 1.5, wb_max = 1.9;
  double gamma = 2.2;

  static NoiseParams from_config(const RunConfig& c) {
    NoiseParams p;
    p.enabled = c.integer("noise.enabled") != 0;
    p.k_iso = c.num("noise.k_iso");
    p.r0 = c.num("noise.r0"); p.r1 = c.num("noise.r1");
    p.row0 = c.num("noise.row0"); p.row1 = c.num("noise.row1");
    p.q = c.num("noise.q");
    p.iso_long_min = c.num("noise.iso_long_min");
    p.iso_long_max = c.num("noise.iso_long_max");
    p.iso_short_min = c.num("noise.iso_short_min");
    p.iso_short_max = c.num("noise.iso_short_max");
    p.wr_min = c.num("isp.wr_min"); p.wr_max = c.num("isp.wr_max");
    p.wb_min = c.num("isp.wb_min"); p.wb_max = c.num("isp.wb_max");
    p.gamma = c.num("isp.gamma");
    p.validate();
    return p;
  }

  double read_sigma(double iso) const { return r0 + r1 * iso; }
  double row_sigma(double iso) const { return row0 + row1 * iso; }
  double gain(double iso) const { return k_iso * iso; }

  void validate() const {
    require(k_iso >= 0 && r0 >= 0 && r1 >= 0 && row0 >= 0 && row1 >= 0 && q >= 0,
            "NoiseParams: all noise parameters must be >= 0");
    require(iso_long_min <= iso_long_max && iso_short_min <= iso_short_max,
            "NoiseParams: empty ISO range");
  }
};

namespace detail {
// RGGB site classification: 0=R, 1=G (on red row), 2=G (on blue row), 3=B.
inline int bayer_site(int y, int x) {
  return (y % 2) * 2 + (x % 2);
}
}  // namespace detail

/// sRGB -> simulated RAW: inverse gamma v^g, inverse white balance on R/B,
/// mosaic to a single RGGB plane. Clamps to [0,1].
inline TensorF unprocess(const TensorF& srgb, const IspParams& p) {
  p.validate();
  require(srgb.c == 3, "unprocess: need 3 channels, got " + srgb.shape_str());
  require(srgb.h % 2 == 0 && srgb.w % 2 == 0,
          "unprocess: extents must be even, got " + srgb.shape_str());
  TensorF raw(srgb.n, 1, srgb.h, srgb.w);
  for (int in = 0; in < srgb.n; ++in)
    for (int y = 0; y < srgb.h; ++y)
      for (int x = 0; x < srgb.w; ++x) {
        int site = detail::bayer_site(y, x);
        int ch = site == 0 ? 0 : (site == 3 ? 2 : 1);
        double v = std::pow(std::max(0.0, static_cast<double>(srgb.at(in, ch, y, x))), p.gamma);
        if (ch == 0) v /= p.wr;
        if (ch == 2) v /= p.wb;
        raw.at(in, 0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return raw;
}

/// Physics-style noise injection in the RAW domain:
///   y = K * Poisson(x / K) + N(0, sigma_r^2) + rowwise N(0, sigma_row^2)
///       + U(-q/2, q/2),  K = k_iso * iso.
/// k_iso = 0 skips shot noise. Output clamped to [0,1]. The rng consumption
/// order is fixed (row draw, then per pixel: shot, read, quant) so results
/// are reproducible byte-for-byte from the seed.
inline TensorF add_noise(const TensorF& raw, double iso, const NoiseParams& np,
                         Rng& rng, bool long_exposure = true) {
  np.validate();
  double lo = long_exposure ? np.iso_long_min : np.iso_short_min;
  double hi = long_exposure ? np.iso_long_max : np.iso_short_max;
  require(iso >= lo && iso <= hi,
          "add_noise: iso " + std::to_string(iso) + " outside configured range [" +
              std::to_string(lo) + ", " + std::to_string(hi) + "]");
  double K = np.gain(iso);
  double sr = np.read_sigma(iso);
  double srow = np.row_sigma(iso);
  TensorF out = raw;
  for (int in = 0; in < raw.n; ++in)
    for (int ic = 0; ic < raw.c; ++ic)
      for (int y = 0; y < raw.h; ++y) {
        double row_off = srow > 0 ? rng.normal(0.0, srow) : 0.0;
        for (int x = 0; x < raw.w; ++x) {
          double v = raw.at(in, ic, y, x);
          if (K > 0) v = K * rng.poisson(v / K);
          if (sr > 0) v += rng.normal(0.0, sr);
          v += row_off;
          if (np.q > 0) v += rng.uniform(-np.q / 2, np.q / 2);
          out.at(in, ic, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
  return out;
}

/// RAW -> sRGB: bilinear demosaic, white-balance gains, gamma 1/g, clamp.
/// The demosaic reproduces locally linear signals exactly away from borders.
inline TensorF process(const TensorF& raw, const IspParams& p) {
  p.validate();
  require(raw.c == 1, "process: need a single RGGB plane");
  require(raw.h % 2 == 0 && raw.w % 2 == 0,
          "process: extents must be even, got " + raw.shape_str());
  const int h = raw.h, w = raw.w;
  TensorF rgb(raw.n, 3, h, w);
  auto rd = [&](int in, int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return static_cast<double>(raw.at(in, 0, y, x));
  };
  for (int in = 0; in < raw.n; ++in)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int site = detail::bayer_site(y, x);
        double r, g, b;
        switch (site) {
          case 0:  // R site
            r = rd(in, y, x);
            g = 0.25 * (rd(in, y - 1, x) + rd(in, y + 1, x) + rd(in, y, x - 1) + rd(in, y, x + 1));
            b = 0.25 * (rd(in, y - 1, x - 1) + rd(in, y - 1, x + 1) + rd(in, y + 1, x - 1) + rd(in, y + 1, x + 1));
            break;
          case 1:  // G on red row
            g = rd(in, y, x);
            r = 0.5 * (rd(in, y, x - 1) + rd(in, y, x + 1));
            b = 0.5 * (rd(in, y - 1, x) + rd(in, y + 1, x));
            break;
          case 2:  // G on blue row
            g = rd(in, y, x);
            r = 0.5 * (rd(in, y - 1, x) + rd(in, y + 1, x));
            b = 0.5 * (rd(in, y, x - 1) + rd(in, y, x + 1));
            break;
          default:  // B site
            b = rd(in, y, x);
            g = 0.25 * (rd(in, y - 1, x) + rd(in, y + 1, x) + rd(in, y, x - 1) + rd(in, y, x + 1));
            r = 0.25 * (rd(in, y - 1, x - 1) + rd(in, y - 1, x + 1) + rd(in, y + 1, x - 1) + rd(in, y + 1, x + 1));
        }
        double inv_g = 1.0 / p.gamma;
        rgb.at(in, 0, y, x) = static_cast<float>(std::clamp(std::pow(std::clamp(r * p.wr, 0.0, 1.0), inv_g), 0.0, 1.0));
        rgb.at(in, 1, y, x) = static_cast<float>(std::clamp(std::pow(std::clamp(g, 0.0, 1.0), inv_g), 0.0, 1.0));
        rgb.at(in, 2, y, x) = static_cast<float>(std::clamp(std::pow(std::clamp(b * p.wb, 0.0, 1.0), inv_g), 0.0, 1.0));
      }
  return rgb;
}

/// Full degradation for one tuple: shared IspParams drawn per tuple, then
/// unprocess -> add_noise -> process for l and s independently.
struct NoisyPair {
  TensorF l_n, s_n;
  double iso_l = 0, iso_s = 0;
  IspParams isp;
};

inline NoisyPair simulate_pair(const TensorF& l, const TensorF& s,
                               const NoiseParams& np, Rng& rng) {
  NoisyPair out;
  out.isp.gamma = np.gamma;
  out.isp.wr = rng.uniform(np.wr_min, np.wr_max);
  out.isp.wb = rng.uniform(np.wb_min, np.wb_max);
  out.iso_l = rng.uniform(np.iso_long_min, np.iso_long_max);
  out.iso_s = rng.uniform(np.iso_short_min, np.iso_short_max);
  if (!np.enabled) {
    out.l_n = l;
    out.s_n = s;
    return out;
  }
  TensorF raw_l = unprocess(l, out.isp);
  raw_l = add_noise(raw_l, out.iso_l, np, rng, true);
  out.l_n = process(raw_l, out.isp);
  TensorF raw_s = unprocess(s, out.isp);
  raw_s = add_noise(raw_s, out.iso_s, np, rng, false);
  out.s_n = process(raw_s, out.isp);
  return out;
}

}  // namespace d2h

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "d2h/config.hpp"
#include "d2h/isp.hpp"
#include "d2h/rng.hpp"
#include "d2h/synth.hpp"
#include "d2h/tensor.hpp"

namespace d2h {

struct AugmentConfig {
  double p_ia = 0.3, p_ca = 0.5, p_cutnoise = 0.3;
  double ca_a_min = 0.3, ca_a_max = 0.6;
  double ca_b_min = 0.001, ca_b_max = 0.01;
  int varmap_window = 8;
  double percentile = 5.0;
  int samples_per_map = 1000;
  int square_side = 32;
  int crop_size = 64;
  int cutnoise_side = 30;

  // Gamma values for Illumination Adjustment; fixed by the method, not a
  // tunable.
  static const std::vector<double>& gamma_set() {
    static const std::vector<double> g = {1.0 / 0.6, 1.0 / 0.7, 1.0 / 0.75,
                                          1.0 / 0.8, 1.0 / 0.9};
    return g;
  }

  static AugmentConfig from_config(const RunConfig& c) {
    AugmentConfig a;
    a.p_ia = c.num("augment.p_ia");
    a.p_ca = c.num("augment.p_ca");
    a.p_cutnoise = c.num("augment.p_cutnoise");
    a.ca_a_min = c.num("augment.ca_a_min");
    a.ca_a_max = c.num("augment.ca_a_max");
    a.ca_b_min = c.num("augment.ca_b_min");
    a.ca_b_max = c.num("augment.ca_b_max");
    a.varmap_window = c.integer("augment.varmap_window");
    a.percentile = c.num("augment.percentile");
    a.samples_per_map = c.integer("augment.samples_per_map");
    a.square_side = c.integer("augment.square_side");
    a.crop_size = c.integer("augment.crop_size");
    a.cutnoise_side = c.integer("augment.cutnoise_side");
    a.validate();
    return a;
  }

  void validate() const {
    require(p_ia >= 0 && p_ia <= 1 && p_ca >= 0 && p_ca <= 1 &&
                p_cutnoise >= 0 && p_cutnoise <= 1,
            "AugmentConfig: probabilities must be in [0,1]");
    require(varmap_window >= 1 && samples_per_map >= 1 && square_side >= 1,
            "AugmentConfig: bad varmap parameters");
  }
};

// ---- VarmapSelection ---------------------------------------------------

/// Blur map v = min(Var(l) / max(Var(l_last), eps), 1) over non-overlapping
/// k x k luminance windows, nearest-upsampled back to full resolution.
/// Smaller means blurrier.
struct VarianceMap {
  TensorF values;  // 1 x 1 x H x W, constant within each k x k cell
  int window = 8;
};

inline VarianceMap variance_map(const TensorF& l, const TensorF& l_last, int k) {
  require_same_shape(l, l_last, "variance_map");
  require(l.n == 1 && l.c == 3, "variance_map: need 1x3xHxW");
  require(l.h % k == 0 && l.w % k == 0,
          "variance_map: extents " + l.shape_str() + " not divisible by window " +
              std::to_string(k));
  constexpr double eps = 1e-8;
  auto luma = [](const TensorF& t, int y, int x) {
    return 0.299 * t.at(0, 0, y, x) + 0.587 * t.at(0, 1, y, x) +
           0.114 * t.at(0, 2, y, x);
  };
  auto cell_var = [&](const TensorF& t, int cy, int cx) {
    double mean = 0.0;
    for (int y = 0; y < k; ++y)
      for (int x = 0; x < k; ++x) mean += luma(t, cy * k + y, cx * k + x);
    mean /= k * k;
    double var = 0.0;
    for (int y = 0; y < k; ++y)
      for (int x = 0; x < k; ++x) {
        double d = luma(t, cy * k + y, cx * k + x) - mean;
        var += d * d;
      }
    return var / (k * k);
  };
  VarianceMap vm;
  vm.window = k;
  vm.values = TensorF(1, 1, l.h, l.w);
  for (int cy = 0; cy < l.h / k; ++cy)
    for (int cx = 0; cx < l.w / k; ++cx) {
      double v = std::min(cell_var(l, cy, cx) / std::max(cell_var(l_last, cy, cx), eps), 1.0);
      for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x)
          vm.values.at(0, 0, cy * k + y, cx * k + x) = static_cast<float>(v);
    }
  return vm;
}

struct SelectionResult {
  Manifest augmented;     // input records plus selected crop records
  double threshold = 0;   // dataset-wide percentile of square means
  bool degenerate = false;
  size_t selected_count = 0;
};

/// Dataset-wide blurry-patch mining: sample squares per map, pool the square
/// means, set the percentile threshold, re-sample and keep squares strictly
/// below it. Depends only on (manifest order, cfg, seed).
inline SelectionResult select_blurry_patches(const Manifest& manifest,
                                             const std::vector<VarianceMap>& maps,
                                             const AugmentConfig& cfg,
                                             uint64_t seed) {
  require(manifest.records.size() == maps.size(),
          "select_blurry_patches: manifest/map count mismatch");
  cfg.validate();
  auto square_mean = [&](const TensorF& map, int y0, int x0) {
    double acc = 0.0;
    for (int y = 0; y < cfg.square_side; ++y)
      for (int x = 0; x < cfg.square_side; ++x)
        acc += map.at(0, 0, y0 + y, x0 + x);
    return acc / (static_cast<double>(cfg.square_side) * cfg.square_side);
  };
  auto sample_round = [&](size_t map_idx, auto&& consume) {
    const TensorF& map = maps[map_idx].values;
    require(cfg.square_side <= map.h && cfg.square_side <= map.w,
            "select_blurry_patches: square larger than image");
    Rng rng = Rng::derive(seed, map_idx, 0x5e1ec7);
    for (int i = 0; i < cfg.samples_per_map; ++i) {
      int y0 = static_cast<int>(rng.uniform_int(map.h - cfg.square_side + 1));
      int x0 = static_cast<int>(rng.uniform_int(map.w - cfg.square_side + 1));
      consume(y0, x0, square_mean(map, y0, x0));
    }
  };

  std::vector<double> pooled;
  for (size_t i = 0; i < maps.size(); ++i)
    sample_round(i, [&](int, int, double m) { pooled.push_back(m); });
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  size_t idx = static_cast<size_t>(cfg.percentile / 100.0 * (sorted.size() - 1));
  SelectionResult res;
  res.threshold = sorted[idx];
  res.augmented = manifest;
  // Same per-map streams in the second round, so the kept squares are a
  // subset of the pooled statistics.
  for (size_t i = 0; i < maps.size(); ++i)
    sample_round(i, [&](int y0, int x0, double m) {
      if (m < res.threshold) {
        TupleRecord r = manifest.records[i];
        r.crop_y = y0;
        r.crop_x = x0;
        r.crop_side = cfg.square_side;
        res.augmented.records.push_back(std::move(r));
        ++res.selected_count;
      }
    });
  if (res.selected_count == 0) res.degenerate = true;
  return res;
}

// ---- Appearance Adjustment ---------------------------------------------

/// Illumination Adjustment: u -> max(u, 1e-8)^g, identical on every image of
/// the tuple.
inline TensorF illumination_adjust(const TensorF& img, double g) {
  TensorF out = img;
  for (auto& v : out.data)
    v = static_cast<float>(std::pow(std::max(static_cast<double>(v), 1e-8), g));
  return out;
}

/// Color Adjustment s' = a*s + b, short-exposure image only. Left unclamped;
/// the noise stage and model input clamp downstream.
inline TensorF color_adjust(const TensorF& s, double a, double b) {
  TensorF out = s;
  for (auto& v : out.data) v = static_cast<float>(a * v + b);
  return out;
}

// ---- CutNoise ----------------------------------------------------------

struct CutNoiseResult {
  TensorF s_n;   // M*s_first + (1-M)*s_n
  TensorF mask;  // 1 x 1 x H x W binary square
  int y0 = 0, x0 = 0, side = 0;
};

/// Pastes a ground-truth square into the noisy short input at a uniformly
/// random in-bounds position. side 0 is the configured-off case.
inline CutNoiseResult cut_noise(const TensorF& s_n, const TensorF& s_first,
                                int side, Rng& rng) {
  require_same_shape(s_n, s_first, "cut_noise");
  require(side >= 0 && side <= s_n.h && side <= s_n.w,
          "cut_noise: side " + std::to_string(side) + " exceeds image " +
              s_n.shape_str());
  CutNoiseResult res;
  res.s_n = s_n;
  res.mask = TensorF(1, 1, s_n.h, s_n.w);
  res.side = side;
  if (side == 0) return res;
  res.y0 = static_cast<int>(rng.uniform_int(s_n.h - side + 1));
  res.x0 = static_cast<int>(rng.uniform_int(s_n.w - side + 1));
  for (int y = res.y0; y < res.y0 + side; ++y)
    for (int x = res.x0; x < res.x0 + side; ++x) {
      res.mask.at(0, 0, y, x) = 1.0f;
      for (int c = 0; c < s_n.c; ++c)
        for (int in = 0; in < s_n.n; ++in)
          res.s_n.at(in, c, y, x) = s_first.at(in, c, y, x);
    }
  return res;
}

// ---- full per-sample pipeline ------------------------------------------

struct TrainSample {
  TensorF l_n, s_n, z;       // model inputs and ground truth
  TensorF l_clean, s_clean;  // post-crop, post-IA references
  bool ia_applied = false, ca_applied = false, cut_applied = false;
};

inline TensorF crop(const TensorF& img, int y0, int x0, int side) {
  require(y0 >= 0 && x0 >= 0 && y0 + side <= img.h && x0 + side <= img.w,
          "crop: window out of bounds");
  TensorF out(img.n, img.c, side, side);
  for (int in = 0; in < img.n; ++in)
    for (int ic = 0; ic < img.c; ++ic)
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          out.at(in, ic, y, x) = img.at(in, ic, y0 + y, x0 + x);
  return out;
}

/// Crop -> IA -> CA -> noise -> CutNoise, with fixed rng consumption order
/// so a seed pins the sample bytes. Ground truth z receives IA only.
inline TrainSample apply_augmentations(const ExposureTuple& tuple,
                                       const TupleRecord& rec,
                                       const AugmentConfig& acfg,
                                       const NoiseParams& np, Rng& rng) {
  int side = rec.crop_side > 0 ? std::min(rec.crop_side, acfg.crop_size)
                               : acfg.crop_size;
  require(side <= tuple.l.h && side <= tuple.l.w,
          "apply_augmentations: crop larger than image");
  int max_y = tuple.l.h - side, max_x = tuple.l.w - side;
  int y0, x0;
  if (rec.crop_side > 0) {
    // VarmapSelection pinned a square; draw the crop inside it.
    int span_y = std::max(rec.crop_side - side, 0);
    int span_x = std::max(rec.crop_side - side, 0);
    y0 = rec.crop_y + (span_y > 0 ? static_cast<int>(rng.uniform_int(span_y + 1)) : 0);
    x0 = rec.crop_x + (span_x > 0 ? static_cast<int>(rng.uniform_int(span_x + 1)) : 0);
    y0 = std::min(y0, max_y);
    x0 = std::min(x0, max_x);
  } else {
    y0 = max_y > 0 ? static_cast<int>(rng.uniform_int(max_y + 1)) : 0;
    x0 = max_x > 0 ? static_cast<int>(rng.uniform_int(max_x + 1)) : 0;
  }

  TensorF l = crop(tuple.l, y0, x0, side);
  TensorF s = crop(tuple.s, y0, x0, side);
  TensorF z = crop(tuple.s_first, y0, x0, side);

  // Gates and parameters are always drawn, applied or not, so the stream
  // position never depends on earlier outcomes.
  double u_ia = rng.uniform();
  size_t g_idx = rng.uniform_int(AugmentConfig::gamma_set().size());
  double u_ca = rng.uniform();
  double ca_a = rng.uniform(acfg.ca_a_min, acfg.ca_a_max);
  double ca_b = rng.uniform(acfg.ca_b_min, acfg.ca_b_max);
  double u_cut = rng.uniform();

  TrainSample out;
  if ((out.ia_applied = u_ia < acfg.p_ia)) {
    double g = AugmentConfig::gamma_set()[g_idx];
    l = illumination_adjust(l, g);
    s = illumination_adjust(s, g);
    z = illumination_adjust(z, g);
  }
  out.l_clean = l;
  out.z = z;
  if ((out.ca_applied = u_ca < acfg.p_ca)) s = color_adjust(s, ca_a, ca_b);
  out.s_clean = s;

  TensorF l_in = l, s_in = s;
  l_in.clamp_(0.f, 1.f);
  s_in.clamp_(0.f, 1.f);
  NoisyPair pair = simulate_pair(l_in, s_in, np, rng);
  out.l_n = pair.l_n;
  out.s_n = pair.s_n;

  int cut_side = std::min({acfg.cutnoise_side, side, side});
  CutNoiseResult cut = cut_noise(out.s_n, z, cut_side, rng);
  if ((out.cut_applied = u_cut < acfg.p_cutnoise && cut_side > 0))
    out.s_n = cut.s_n;
  return out;
}

}  // namespace d2h

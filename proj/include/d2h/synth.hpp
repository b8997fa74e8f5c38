#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "d2h/rng.hpp"
#include "d2h/tensor.hpp"

namespace d2h {

struct FrameSequence {
  std::vector<TensorF> frames;
  double fps = 60.0;

  void validate() const {
    require(frames.size() >= 2, "FrameSequence: need at least 2 frames");
    for (const auto& f : frames)
      require_same_shape(frames[0], f, "FrameSequence");
  }
};

/// One training sample: blurry long exposure l, sharp-but-dim short exposure
/// s, plus the verbatim frames l_last and s_first (the ground truth).
struct ExposureTuple {
  TensorF l, s, l_last, s_first;
  std::string source_id;
  int start_index = 0;
  int interp_factor = 1;
};

struct SynthConfig {
  int interp_factor = 8;
  int long_frames = 64;
  int gap_frames = 8;
  int short_frames = 8;  // 8:1 exposure ratio with the defaults
  int stride = 96;

  int window() const { return long_frames + gap_frames + short_frames; }
  void validate() const {
    require(interp_factor >= 1, "SynthConfig: interp_factor must be >= 1");
    require(long_frames >= 1 && short_frames >= 1 && gap_frames >= 0,
            "SynthConfig: bad frame counts");
    require(stride >= 1, "SynthConfig: stride must be >= 1");
  }
};

/// Linear cross-fade interpolation: between each consecutive pair (a, b)
/// inserts factor-1 frames (1-t)a + tb at t = j/factor. Output length
/// (n-1)*factor + 1.
inline FrameSequence interpolate_sequence(const FrameSequence& seq, int factor) {
  require(factor >= 1, "interpolate_sequence: factor must be >= 1");
  seq.validate();
  if (factor == 1) return seq;
  FrameSequence out;
  out.fps = seq.fps * factor;
  out.frames.reserve((seq.frames.size() - 1) * factor + 1);
  for (size_t i = 0; i + 1 < seq.frames.size(); ++i) {
    const TensorF& a = seq.frames[i];
    const TensorF& b = seq.frames[i + 1];
    out.frames.push_back(a);
    for (int j = 1; j < factor; ++j) {
      float t = static_cast<float>(j) / factor;
      TensorF m = a;
      for (size_t p = 0; p < m.size(); ++p)
        m.data[p] = (1.0f - t) * a.data[p] + t * b.data[p];
      out.frames.push_back(std::move(m));
    }
  }
  out.frames.push_back(seq.frames.back());
  return out;
}

/// Exposure averaging over an interpolated sequence: l averages the first
/// long_frames of the window, then a readout gap, then s averages
/// short_frames. l_last / s_first are verbatim copies of sequence members.
inline ExposureTuple synthesize_tuple(const FrameSequence& seq,
                                      const SynthConfig& cfg, int start_index) {
  cfg.validate();
  seq.validate();
  require(start_index >= 0 &&
              start_index + cfg.window() <= static_cast<int>(seq.frames.size()),
          "synthesize_tuple: window [" + std::to_string(start_index) + ", " +
              std::to_string(start_index + cfg.window()) +
              ") overflows sequence of length " +
              std::to_string(seq.frames.size()));
  auto mean_of = [&](int from, int count) {
    TensorF acc = seq.frames[from];
    TensorD sum = acc.cast<double>();
    for (int i = 1; i < count; ++i) {
      const TensorF& f = seq.frames[from + i];
      for (size_t p = 0; p < sum.size(); ++p) sum.data[p] += f.data[p];
    }
    for (size_t p = 0; p < sum.size(); ++p) sum.data[p] /= count;
    return sum.cast<float>();
  };
  ExposureTuple t;
  t.l = mean_of(start_index, cfg.long_frames);
  t.l_last = seq.frames[start_index + cfg.long_frames - 1];
  int s_start = start_index + cfg.long_frames + cfg.gap_frames;
  t.s = mean_of(s_start, cfg.short_frames);
  t.s_first = seq.frames[s_start];
  t.start_index = start_index;
  return t;
}

// ---- manifest ----------------------------------------------------------

/// One manifest row. crop_* of -1 means full image (VarmapSelection appends
/// cropped rows with concrete coordinates).
struct TupleRecord {
  std::string dir;
  std::string source_id;
  int start_index = 0;
  int interp_factor = 1;
  int crop_y = -1, crop_x = -1, crop_side = -1;
};

struct Manifest {
  std::vector<TupleRecord> records;
};

inline std::string manifest_to_text(const Manifest& m) {
  std::ostringstream out;
  for (const auto& r : m.records)
    out << r.dir << '\t' << r.source_id << '\t' << r.start_index << '\t'
        << r.interp_factor << '\t' << r.crop_y << '\t' << r.crop_x << '\t'
        << r.crop_side << '\n';
  return out.str();
}

inline Manifest manifest_from_text(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    TupleRecord r;
    std::string f;
    std::getline(ls, r.dir, '\t');
    std::getline(ls, r.source_id, '\t');
    std::getline(ls, f, '\t'); r.start_index = std::stoi(f);
    std::getline(ls, f, '\t'); r.interp_factor = std::stoi(f);
    std::getline(ls, f, '\t'); r.crop_y = std::stoi(f);
    std::getline(ls, f, '\t'); r.crop_x = std::stoi(f);
    std::getline(ls, f, '\t'); r.crop_side = std::stoi(f);
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_manifest: cannot open " + path);
  f << manifest_to_text(m);
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_manifest: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return manifest_from_text(ss.str());
}

// ---- procedural test footage -------------------------------------------

/// Moving bright shapes over a static gradient; gives the synthesizer real
/// motion without shipping any media. Deterministic in (seed, frame count).
inline FrameSequence make_procedural_video(uint64_t seed, int frames, int h,
                                           int w) {
  Rng rng = Rng::derive(seed, 0xf00d);
  FrameSequence seq;
  double cx = rng.uniform(0.2, 0.8) * w, cy = rng.uniform(0.2, 0.8) * h;
  double vx = rng.uniform(-1.5, 1.5), vy = rng.uniform(-1.5, 1.5);
  double side = rng.uniform(0.08, 0.2) * std::min(h, w);
  double dot_x = rng.uniform(0.1, 0.9) * w, dot_y = rng.uniform(0.1, 0.9) * h;
  double dvx = rng.uniform(-2.0, 2.0), dvy = rng.uniform(-2.0, 2.0);
  // Global camera pan over a smooth texture: the dominant blur source. A
  // static background would leave most of the long exposure sharp and make
  // the tuple trivially recoverable from the long input alone.
  double bvx = rng.uniform(0.4, 1.2) * (rng.uniform(0.0, 1.0) < 0.5 ? -1 : 1);
  double bvy = rng.uniform(0.4, 1.2) * (rng.uniform(0.0, 1.0) < 0.5 ? -1 : 1);
  double p1 = rng.uniform(7.0, 12.0), p2 = rng.uniform(8.0, 14.0);
  double p3 = rng.uniform(17.0, 29.0);
  constexpr double kTau = 6.283185307179586;
  for (int f = 0; f < frames; ++f) {
    TensorF img(1, 3, h, w);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double u = x + bvx * f, v = y + bvy * f;
          double tex = 0.5 + 0.18 * std::sin(kTau * u / p1) *
                                 std::sin(kTau * v / p2) +
                       0.12 * std::sin(kTau * (u + v) / p3);
          float g = static_cast<float>(tex) +
                    0.08f * (static_cast<float>(x) / w) * (c + 1) / 3.0f;
          img.at(0, c, y, x) = g;
        }
    double rx = cx + vx * f, ry = cy + vy * f;
    for (int y = std::max(0, static_cast<int>(ry - side / 2));
         y < std::min(h, static_cast<int>(ry + side / 2)); ++y)
      for (int x = std::max(0, static_cast<int>(rx - side / 2));
           x < std::min(w, static_cast<int>(rx + side / 2)); ++x) {
        img.at(0, 0, y, x) = 0.9f;
        img.at(0, 1, y, x) = 0.8f;
        img.at(0, 2, y, x) = 0.3f;
      }
    double px = dot_x + dvx * f, py = dot_y + dvy * f;
    int ix = static_cast<int>(px), iy = static_cast<int>(py);
    if (iy >= 1 && iy < h - 1 && ix >= 1 && ix < w - 1)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          for (int c = 0; c < 3; ++c) img.at(0, c, iy + dy, ix + dx) = 1.0f;
    img.clamp_(0.f, 1.f);
    seq.frames.push_back(std::move(img));
  }
  return seq;
}

/// Windows every cfg.stride interpolated frames across each source, in
/// source order. Deterministic by construction; the seed only feeds
/// procedural sources upstream.
inline std::vector<std::pair<TupleRecord, ExposureTuple>> build_dataset(
    const std::vector<std::pair<std::string, FrameSequence>>& sources,
    const SynthConfig& cfg) {
  require(!sources.empty(), "build_dataset: empty source set");
  cfg.validate();
  std::vector<std::pair<TupleRecord, ExposureTuple>> out;
  for (const auto& [id, seq] : sources) {
    FrameSequence interp = interpolate_sequence(seq, cfg.interp_factor);
    int len = static_cast<int>(interp.frames.size());
    require(len >= cfg.window(),
            "build_dataset: source " + id + " shorter than one window");
    for (int start = 0; start + cfg.window() <= len; start += cfg.stride) {
      ExposureTuple t = synthesize_tuple(interp, cfg, start);
      t.source_id = id;
      t.interp_factor = cfg.interp_factor;
      TupleRecord r;
      r.source_id = id;
      r.start_index = start;
      r.interp_factor = cfg.interp_factor;
      out.emplace_back(std::move(r), std::move(t));
    }
  }
  return out;
}

}  // namespace d2h

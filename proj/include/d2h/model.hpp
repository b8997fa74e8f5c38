#pragma once

#include <string>
#include <vector>

#include "d2h/rng.hpp"
#include "d2h/serialize.hpp"
#include "d2h/tape.hpp"

namespace d2h {

constexpr float kLeakySlope = 0.2f;

/// Named parameter tensors for one network. The store owns the master
/// float copies; every forward pass binds them onto a fresh tape.
struct ParamStore {
  std::vector<std::string> names;
  std::vector<TensorF> values;

  int add(const std::string& name, TensorF t) {
    names.push_back(name);
    values.push_back(std::move(t));
    return static_cast<int>(values.size() - 1);
  }

  void to_checkpoint(Checkpoint& ck, const std::string& prefix) const {
    for (size_t i = 0; i < values.size(); ++i)
      ck.entries[prefix + names[i]] = values[i];
  }

  void from_checkpoint(const Checkpoint& ck, const std::string& prefix) {
    for (size_t i = 0; i < values.size(); ++i) {
      auto it = ck.entries.find(prefix + names[i]);
      require(it != ck.entries.end(),
              "checkpoint: missing parameter " + prefix + names[i]);
      require_same_shape(values[i], it->second, "checkpoint parameter");
      values[i] = it->second;
    }
  }

  size_t element_count() const {
    size_t n = 0;
    for (const auto& v : values) n += v.size();
    return n;
  }
};

/// Tape binding of a ParamStore: one leaf per parameter, in store order.
struct Bound {
  TapeF* tape = nullptr;
  std::vector<TapeF::Id> ids;

  static Bound bind(TapeF& t, const ParamStore& ps, bool requires_grad) {
    Bound b;
    b.tape = &t;
    b.ids.reserve(ps.values.size());
    for (const auto& v : ps.values) b.ids.push_back(t.leaf(v, requires_grad));
    return b;
  }
};

struct Conv {
  int w = -1, b = -1;
  ConvSpec spec;
};

inline Conv make_conv(ParamStore& ps, const std::string& name, int cin,
                      int cout, int k, int stride, Rng& rng,
                      bool zero_init = false) {
  require(k % 2 == 1, "make_conv: kernel size must be odd");
  TensorF w(cout, cin, k, k);
  if (!zero_init) {
    double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (auto& v : w.data) v = static_cast<float>(rng.normal(0.0, std));
  }
  Conv c;
  c.w = ps.add(name + ".w", std::move(w));
  c.b = ps.add(name + ".b", TensorF(1, cout, 1, 1));
  c.spec.stride = stride;
  c.spec.pad = k / 2;
  return c;
}

inline TapeF::Id conv_fwd(Bound& bd, const Conv& c, TapeF::Id x) {
  return bd.tape->conv2d(x, bd.ids[c.w], bd.ids[c.b], c.spec);
}

inline TapeF::Id conv_lrelu(Bound& bd, const Conv& c, TapeF::Id x) {
  return bd.tape->leaky_relu(conv_fwd(bd, c, x), kLeakySlope);
}

/// 4 sequential residual layers, each x + conv(lrelu(conv(x))).
struct ResBlock {
  std::vector<Conv> convs;  // 8 entries
};

inline ResBlock make_resblock(ParamStore& ps, const std::string& name, int ch,
                              Rng& rng) {
  ResBlock rb;
  for (int i = 0; i < 4; ++i) {
    rb.convs.push_back(make_conv(ps, name + ".l" + std::to_string(i) + ".c0", ch, ch, 3, 1, rng));
    rb.convs.push_back(make_conv(ps, name + ".l" + std::to_string(i) + ".c1", ch, ch, 3, 1, rng));
  }
  return rb;
}

inline TapeF::Id res_fwd(Bound& bd, const ResBlock& rb, TapeF::Id x) {
  for (int i = 0; i < 4; ++i) {
    TapeF::Id h = conv_fwd(bd, rb.convs[2 * i + 1],
                           bd.tape->leaky_relu(conv_fwd(bd, rb.convs[2 * i], x), kLeakySlope));
    x = bd.tape->add(x, h);
  }
  return x;
}

// ---- DeblurNet ---------------------------------------------------------

/// 3-level encoder/decoder with DWT/IDWT resampling, widths base*{1,2,4},
/// two residual blocks at the bottleneck and two at the tail. Input is
/// concat(l_n_down, s_n_down), 6 channels; output t, 3 channels, same size.
struct DeblurNet {
  int base = 32;
  ParamStore params;
  Conv head1, head2, e2a, e2b, e3a, e3b;
  ResBlock bott1, bott2;
  Conv d3a, d2m, d2b, d1a, d1m, d1b;
  ResBlock tail1, tail2;
  Conv out;

  static DeblurNet build(int base, Rng& rng) {
    DeblurNet n;
    n.base = base;
    ParamStore& ps = n.params;
    int b = base;
    n.head1 = make_conv(ps, "head1", 6, b, 3, 1, rng);
    n.head2 = make_conv(ps, "head2", b, b, 3, 1, rng);
    n.e2a = make_conv(ps, "e2a", 4 * b, 2 * b, 3, 1, rng);
    n.e2b = make_conv(ps, "e2b", 2 * b, 2 * b, 3, 1, rng);
    n.e3a = make_conv(ps, "e3a", 8 * b, 4 * b, 3, 1, rng);
    n.e3b = make_conv(ps, "e3b", 4 * b, 4 * b, 3, 1, rng);
    n.bott1 = make_resblock(ps, "bott1", 4 * b, rng);
    n.bott2 = make_resblock(ps, "bott2", 4 * b, rng);
    n.d3a = make_conv(ps, "d3a", 4 * b, 8 * b, 3, 1, rng);
    n.d2m = make_conv(ps, "d2m", 4 * b, 2 * b, 1, 1, rng);
    n.d2b = make_conv(ps, "d2b", 2 * b, 2 * b, 3, 1, rng);
    n.d1a = make_conv(ps, "d1a", 2 * b, 4 * b, 3, 1, rng);
    n.d1m = make_conv(ps, "d1m", 2 * b, b, 1, 1, rng);
    n.d1b = make_conv(ps, "d1b", b, b, 3, 1, rng);
    n.tail1 = make_resblock(ps, "tail1", b, rng);
    n.tail2 = make_resblock(ps, "tail2", b, rng);
    n.out = make_conv(ps, "out", b, 3, 3, 1, rng, /*zero_init=*/true);
    return n;
  }

  /// l_down, s_down: N x 3 x H x W with H, W divisible by 4.
  TapeF::Id forward(Bound& bd, TapeF::Id l_down, TapeF::Id s_down) const {
    TapeF& t = *bd.tape;
    const TensorF& lv = t.value(l_down);
    require(lv.h % 4 == 0 && lv.w % 4 == 0,
            "deblurnet: extents must be divisible by 4, got " + lv.shape_str());
    Bound& b = bd;
    TapeF::Id x = t.concat_channels({l_down, s_down});
    TapeF::Id f1 = conv_lrelu(b, head2, conv_lrelu(b, head1, x));
    TapeF::Id f2 = conv_lrelu(b, e2b, conv_lrelu(b, e2a, t.dwt2(f1)));
    TapeF::Id f3 = conv_lrelu(b, e3b, conv_lrelu(b, e3a, t.dwt2(f2)));
    TapeF::Id m = res_fwd(b, bott2, res_fwd(b, bott1, f3));
    TapeF::Id u2 = t.idwt2(conv_fwd(b, d3a, m));
    u2 = conv_lrelu(b, d2b, conv_lrelu(b, d2m, t.concat_channels({u2, f2})));
    TapeF::Id u1 = t.idwt2(conv_fwd(b, d1a, u2));
    u1 = conv_lrelu(b, d1b, conv_lrelu(b, d1m, t.concat_channels({u1, f1})));
    TapeF::Id tail = res_fwd(b, tail2, res_fwd(b, tail1, u1));
    return conv_fwd(b, out, tail);
  }
};

// ---- EnhanceNet --------------------------------------------------------

struct EnhanceFlags {
  bool dense_alignment = false;  // plain conv in place of deformable
  bool no_skip_fusion = false;   // drop alignment/fusion blocks and skips
  bool no_tail_block = false;
};

/// Two 5-level feature pyramids (no weight sharing), hierarchical offset
/// refinement, modulated deformable alignment, per-level fusion residual
/// blocks, UNet-style decoder, tail residual block, global skip over t_up.
struct EnhanceNet {
  int base = 16;
  EnhanceFlags flags;
  ParamStore params;
  std::vector<Conv> pa, pb;          // pyramid extractors, level 1..5
  std::vector<Conv> off1, off2;      // offset/mask producers
  std::vector<Conv> align;           // deformable alignment weights
  std::vector<Conv> fuse_ad;         // 1x1 adapters 2C -> C
  std::vector<ResBlock> fuse_rb;
  std::vector<Conv> dec;             // levels 4..1
  ResBlock tail;
  Conv out;

  static int width(int base, int level) {  // level 1..5
    static const int mult[5] = {1, 2, 4, 8, 8};
    return base * mult[level - 1];
  }

  static EnhanceNet build(int base, Rng& rng, EnhanceFlags flags = {}) {
    EnhanceNet n;
    n.base = base;
    n.flags = flags;
    ParamStore& ps = n.params;
    constexpr int K = 9;
    for (int lv = 1; lv <= 5; ++lv) {
      int cin_a = lv == 1 ? 6 : width(base, lv - 1);
      int cin_b = lv == 1 ? 3 : width(base, lv - 1);
      int c = width(base, lv);
      int stride = lv == 1 ? 1 : 2;
      std::string tag = std::to_string(lv);
      n.pa.push_back(make_conv(ps, "pa" + tag, cin_a, c, 3, stride, rng));
      n.pb.push_back(make_conv(ps, "pb" + tag, cin_b, c, 3, stride, rng));
      if (!flags.no_skip_fusion) {
        int off_in = 2 * c + (lv == 5 ? 0 : 2 * K);
        n.off1.push_back(make_conv(ps, "off1_" + tag, off_in, c, 3, 1, rng));
        n.off2.push_back(make_conv(ps, "off2_" + tag, c, 3 * K, 3, 1, rng, /*zero_init=*/true));
        n.align.push_back(make_conv(ps, "align" + tag, c, c, 3, 1, rng));
        n.fuse_ad.push_back(make_conv(ps, "fuse_ad" + tag, 2 * c, c, 1, 1, rng));
        n.fuse_rb.push_back(make_resblock(ps, "fuse_rb" + tag, c, rng));
      }
    }
    for (int lv = 4; lv >= 1; --lv) {
      int cin = width(base, lv + 1) + (flags.no_skip_fusion ? 0 : width(base, lv));
      n.dec.push_back(make_conv(ps, "dec" + std::to_string(lv), cin, width(base, lv), 3, 1, rng));
    }
    n.tail = make_resblock(ps, "tail", base, rng);
    n.out = make_conv(ps, "out", base, 3, 3, 1, rng, /*zero_init=*/true);
    return n;
  }

  /// s_n, l_n, t_up: N x 3 x H x W, H and W divisible by 16. Returns y.
  TapeF::Id forward(Bound& bd, TapeF::Id s_n, TapeF::Id l_n, TapeF::Id t_up) const {
    TapeF& t = *bd.tape;
    Bound& b = bd;
    const TensorF& sv = t.value(s_n);
    require(sv.h % 16 == 0 && sv.w % 16 == 0,
            "enhancenet: extents must be divisible by 16, got " + sv.shape_str());
    constexpr int K = 9;

    std::vector<TapeF::Id> fa(5), fb(5);
    TapeF::Id xa = t.concat_channels({s_n, t_up});
    TapeF::Id xb = l_n;
    for (int lv = 1; lv <= 5; ++lv) {
      xa = conv_lrelu(b, pa[lv - 1], xa);
      xb = conv_lrelu(b, pb[lv - 1], xb);
      fa[lv - 1] = xa;
      fb[lv - 1] = xb;
    }

    std::vector<TapeF::Id> ff(5);
    if (flags.no_skip_fusion) {
      for (int lv = 1; lv <= 5; ++lv) ff[lv - 1] = fa[lv - 1];
    } else {
      TapeF::Id coarser_off = -1;
      for (int lv = 5; lv >= 1; --lv) {
        std::vector<TapeF::Id> pin = {fa[lv - 1], fb[lv - 1]};
        if (lv < 5) {
          const TensorF& fine = t.value(fa[lv - 1]);
          // Offsets are in pixels of their own level: upsample the grid and
          // double the values.
          pin.push_back(t.scale(t.bilinear_resize(coarser_off, fine.h, fine.w), 2.0f));
        }
        TapeF::Id h = conv_lrelu(b, off1[lv - 1], t.concat_channels(pin));
        TapeF::Id o = conv_fwd(b, off2[lv - 1], h);
        TapeF::Id offs = t.slice_channels(o, 0, 2 * K);
        TapeF::Id mask = t.sigmoid(t.slice_channels(o, 2 * K, 3 * K));
        coarser_off = offs;
        TapeF::Id aligned =
            flags.dense_alignment
                ? conv_fwd(b, align[lv - 1], fb[lv - 1])
                : t.deform_conv2d(fb[lv - 1], b.ids[align[lv - 1].w],
                                  b.ids[align[lv - 1].b], offs, mask);
        TapeF::Id fused = conv_lrelu(b, fuse_ad[lv - 1],
                                     t.concat_channels({aligned, fa[lv - 1]}));
        ff[lv - 1] = res_fwd(b, fuse_rb[lv - 1], fused);
      }
    }

    TapeF::Id d = ff[4];
    for (int lv = 4; lv >= 1; --lv) {
      const TensorF& target = t.value(ff[lv - 1]);
      TapeF::Id up = t.bilinear_resize(d, target.h, target.w);
      TapeF::Id merged = flags.no_skip_fusion
                             ? up
                             : t.concat_channels({up, ff[lv - 1]});
      d = conv_lrelu(b, dec[4 - lv], merged);
    }
    if (!flags.no_tail_block) d = res_fwd(b, tail, d);
    return t.add(conv_fwd(b, out, d), t_up);
  }
};

// ---- two-phase inference -----------------------------------------------

struct InferenceConfig {
  int deblur_resolution = 256;  // fixed DeblurNet input side R
  double alpha = 0.5;           // training-time downsample ratio

  void validate() const {
    require(deblur_resolution >= 16 && deblur_resolution % 16 == 0,
            "InferenceConfig: R must be a positive multiple of 16");
  }
};

struct TwoPhaseResult {
  TensorF t;  // DeblurNet output at R x R
  TensorF y;  // final output at input resolution, clamped to [0,1]
};

/// Area-resize both inputs to R x R, deblur, bilinearly upsample t back to
/// the input resolution, enhance, clamp.
inline TwoPhaseResult two_phase_infer(const TensorF& l_n, const TensorF& s_n,
                                      const DeblurNet& deblur,
                                      const EnhanceNet* enhance,
                                      const InferenceConfig& cfg) {
  cfg.validate();
  require_same_shape(l_n, s_n, "two_phase_infer");
  const int R = cfg.deblur_resolution;
  require(l_n.h >= R && l_n.w >= R,
          "two_phase_infer: input " + l_n.shape_str() +
              " smaller than deblur resolution " + std::to_string(R) +
              "; lower model.deblur_resolution");
  require(l_n.h % 16 == 0 && l_n.w % 16 == 0,
          "two_phase_infer: input extents must be divisible by 16");
  TensorF l_small = l_n.h == R && l_n.w == R ? l_n : area_resize(l_n, R, R);
  TensorF s_small = s_n.h == R && s_n.w == R ? s_n : area_resize(s_n, R, R);

  TwoPhaseResult res;
  {
    TapeF tape;
    Bound bd = Bound::bind(tape, deblur.params, false);
    TapeF::Id t_id = deblur.forward(bd, tape.leaf(l_small), tape.leaf(s_small));
    res.t = tape.value(t_id);
  }
  require(res.t.all_finite(), "two_phase_infer: non-finite DeblurNet output");
  TensorF t_up = bilinear_resize_plain(res.t, l_n.h, l_n.w);
  if (enhance == nullptr) {
    res.y = t_up;
    res.y.clamp_(0.f, 1.f);
    return res;
  }
  {
    TapeF tape;
    Bound bd = Bound::bind(tape, enhance->params, false);
    TapeF::Id y_id = enhance->forward(bd, tape.leaf(s_n), tape.leaf(l_n),
                                      tape.leaf(t_up));
    res.y = tape.value(y_id);
  }
  require(res.y.all_finite(), "two_phase_infer: non-finite EnhanceNet output");
  res.y.clamp_(0.f, 1.f);
  return res;
}

}  // namespace d2h

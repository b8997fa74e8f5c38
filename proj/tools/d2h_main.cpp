// d2h: dual-exposure night-image restoration pipeline, one subcommand per
// stage. Exit codes: 0 success, 1 input error, 2 internal invariant failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "d2h/augment.hpp"
#include "d2h/eval.hpp"
#include "d2h/gradcheck.hpp"
#include "d2h/isp.hpp"
#include "d2h/model.hpp"
#include "d2h/parallel.hpp"
#include "d2h/png_io.hpp"
#include "d2h/serialize.hpp"
#include "d2h/synth.hpp"
#include "d2h/train.hpp"

namespace fs = std::filesystem;
using namespace d2h;

namespace {

/// Thrown by self-check style commands when an invariant fails; maps to
/// exit code 2 instead of the input-error code 1.
struct invariant_failure : std::exception {
  const char* what() const noexcept override { return "invariant failure"; }
};

/// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::string out_dir = ".";
  int64_t seed = -1;  // <0: keep the config value
  int threads = 0;    // 0: keep D2H_THREADS / default

  void attach(CLI::App* sub, bool config_required = true) {
    auto* c = sub->add_option("--config", config_path, "run configuration file");
    if (config_required) c->required();
    sub->add_option("--out", out_dir, "output directory (created if missing)");
    sub->add_option("--seed", seed, "override train.seed from the config");
    sub->add_option("--threads", threads,
                    "worker cap (falls back to D2H_THREADS, default 1)");
  }

  /// Loads the config, applies the seed override and the worker cap.
  /// Callbacks run inside CLI11's parse, so this is each command's entry.
  RunConfig load() const {
    if (threads >= 1) thread_count() = threads;
    RunConfig cfg = config_path.empty() ? RunConfig::defaults()
                                        : RunConfig::load(config_path);
    if (seed >= 0) cfg.set("train.seed", std::to_string(seed));
    return cfg;
  }

  fs::path out() const {
    fs::create_directories(out_dir);
    return out_dir;
  }
};

std::vector<std::string> sorted_pngs(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

void write_tuple_dir(const fs::path& dir, const ExposureTuple& t) {
  fs::create_directories(dir);
  write_png((dir / "l.png").string(), t.l);
  write_png((dir / "s.png").string(), t.s);
  write_png((dir / "l_last.png").string(), t.l_last);
  write_png((dir / "s_first.png").string(), t.s_first);
}

SynthConfig synth_from(const RunConfig& cfg) {
  SynthConfig s;
  s.interp_factor = cfg.integer("synth.interp_factor");
  s.long_frames = cfg.integer("synth.long_frames");
  s.gap_frames = cfg.integer("synth.gap_frames");
  s.short_frames = cfg.integer("synth.short_frames");
  s.stride = cfg.integer("synth.stride");
  return s;
}

DeblurNet deblur_from(const RunConfig& cfg, const Checkpoint& ck) {
  uint64_t seed = static_cast<uint64_t>(cfg.integer("train.seed"));
  Rng dummy = Rng::derive(seed, 0xdeb1);
  DeblurNet net = DeblurNet::build(cfg.integer("model.deblur_base"), dummy);
  net.params.from_checkpoint(ck, "deblur.");
  return net;
}

EnhanceNet enhance_from(const RunConfig& cfg, const Checkpoint& ck,
                        EnhanceFlags flags = {}) {
  uint64_t seed = static_cast<uint64_t>(cfg.integer("train.seed"));
  Rng dummy = Rng::derive(seed, 0xe40a);
  EnhanceNet net = EnhanceNet::build(cfg.integer("model.enhance_base"), dummy, flags);
  net.params.from_checkpoint(ck, "enhance.");
  return net;
}

bool has_stage2(const Checkpoint& ck) {
  return ck.entries.count("enhance.out.w") == 1;
}

void warn_fingerprint(const Checkpoint& ck, const RunConfig& cfg) {
  if (ck.config_fingerprint != cfg.fingerprint())
    std::cerr << "warning: checkpoint was produced under a different config "
                 "(fingerprint "
              << ck.config_fingerprint << " vs " << cfg.fingerprint() << ")\n";
}

void write_losses(const fs::path& path, const std::vector<double>& losses) {
  std::ofstream f(path, std::ios::trunc);
  f << std::setprecision(10);
  for (double l : losses) f << l << "\n";
}

std::vector<VarianceMap> maps_for(const Dataset& data, int window) {
  std::vector<VarianceMap> maps;
  for (const auto& [rec, tuple] : data)
    maps.push_back(variance_map(tuple.l, tuple.l_last, window));
  return maps;
}

// ---- subcommand bodies --------------------------------------------------

int cmd_synth(const Common& common, const std::string& frames_dir,
              int procedural, int frame_count, int frame_size) {
  RunConfig cfg = common.load();
  SynthConfig sc = synth_from(cfg);
  uint64_t seed = static_cast<uint64_t>(cfg.integer("train.seed"));
  std::vector<std::pair<std::string, FrameSequence>> sources;
  if (!frames_dir.empty()) {
    FrameSequence seq;
    for (const auto& f : sorted_pngs(frames_dir)) seq.frames.push_back(read_png(f));
    if (seq.frames.size() < 2)
      throw std::runtime_error("synth: need at least 2 PNG frames in " + frames_dir);
    sources.emplace_back(fs::path(frames_dir).filename().string(), std::move(seq));
  }
  for (int i = 0; i < procedural; ++i)
    sources.emplace_back("proc" + std::to_string(i),
                         make_procedural_video(seed + i, frame_count, frame_size,
                                               frame_size));
  if (sources.empty())
    throw std::runtime_error("synth: pass --frames and/or --procedural");

  auto tuples = build_dataset(sources, sc);
  fs::path out = common.out();
  Manifest manifest;
  for (size_t i = 0; i < tuples.size(); ++i) {
    auto& [rec, tuple] = tuples[i];
    std::ostringstream name;
    name << "tuple_" << std::setw(4) << std::setfill('0') << i;
    fs::path dir = out / name.str();
    write_tuple_dir(dir, tuple);
    rec.dir = dir.string();
    manifest.records.push_back(rec);
  }
  write_manifest((out / "manifest.tsv").string(), manifest);
  std::cout << "wrote " << tuples.size() << " tuples to " << out << "\n";
  return 0;
}

int cmd_varmap(const Common& common, const std::string& long_path,
               const std::string& last_path) {
  RunConfig cfg = common.load();
  TensorF l = read_png(long_path);
  TensorF l_last = read_png(last_path);
  VarianceMap vm = variance_map(l, l_last, cfg.integer("augment.varmap_window"));
  fs::path out = common.out();
  write_png((out / "varmap.png").string(), vm.values);
  write_d2t((out / "varmap.d2t").string(), vm.values);
  std::cout << "wrote " << (out / "varmap.png") << "\n";
  return 0;
}

int cmd_select(const Common& common, const std::string& manifest_path) {
  RunConfig cfg = common.load();
  AugmentConfig acfg = AugmentConfig::from_config(cfg);
  Manifest manifest = read_manifest(manifest_path);
  Dataset data = load_dataset(manifest);
  auto maps = maps_for(data, acfg.varmap_window);
  uint64_t seed = static_cast<uint64_t>(cfg.integer("train.seed"));
  SelectionResult res = select_blurry_patches(manifest, maps, acfg, seed);
  fs::path out = common.out();
  write_manifest((out / "manifest_selected.tsv").string(), res.augmented);
  std::cout << "threshold " << res.threshold << ", selected "
            << res.selected_count << " squares";
  if (res.degenerate) std::cout << " (degenerate: nothing below threshold)";
  std::cout << "\n";
  return 0;
}

int cmd_augment_preview(const Common& common, const std::string& manifest_path,
                        int index) {
  RunConfig cfg = common.load();
  AugmentConfig acfg = AugmentConfig::from_config(cfg);
  NoiseParams np = NoiseParams::from_config(cfg);
  Manifest manifest = read_manifest(manifest_path);
  require(index >= 0 && index < static_cast<int>(manifest.records.size()),
          "augment-preview: index out of range");
  Dataset data = load_dataset(manifest);
  uint64_t seed = static_cast<uint64_t>(cfg.integer("train.seed"));
  Rng rng = Rng::derive(seed, static_cast<uint64_t>(index), 0xa46);
  TrainSample smp = apply_augmentations(data[index].second, data[index].first,
                                        acfg, np, rng);
  fs::path out = common.out();
  write_png((out / "l_n.png").string(), smp.l_n);
  write_png((out / "s_n.png").string(), smp.s_n);
  write_png((out / "z.png").string(), smp.z);
  std::cout << "ia=" << smp.ia_applied << " ca=" << smp.ca_applied
            << " cutnoise=" << smp.cut_applied << "\n";
  return 0;
}

int cmd_noise_sim(const Common& common, const std::string& image_path,
                  double iso, bool short_exposure) {
  RunConfig cfg = common.load();
  NoiseParams np = NoiseParams::from_config(cfg);
  if (iso <= 0)
    iso = short_exposure ? 0.5 * (np.iso_short_min + np.iso_short_max)
                         : 0.5 * (np.iso_long_min + np.iso_long_max);
  TensorF x = read_png(image_path);
  uint64_t seed = static_cast<uint64_t>(cfg.integer("train.seed"));
  Rng rng = Rng::derive(seed, 0x401e);
  IspParams isp;
  isp.gamma = np.gamma;
  isp.wr = rng.uniform(np.wr_min, np.wr_max);
  isp.wb = rng.uniform(np.wb_min, np.wb_max);
  TensorF raw = unprocess(x, isp);
  raw = add_noise(raw, iso, np, rng, !short_exposure);
  TensorF noisy = process(raw, isp);
  fs::path out = common.out();
  write_png((out / "noisy.png").string(), noisy);
  std::cout << "iso " << iso << " -> " << (out / "noisy.png") << "\n";
  return 0;
}

int cmd_train_deblur(const Common& common, const std::string& manifest_path) {
  RunConfig cfg = common.load();
  Dataset data = load_dataset(read_manifest(manifest_path));
  TrainResult res = train_deblur(data, cfg);
  fs::path out = common.out();
  save_checkpoint((out / "deblur.ckpt").string(), res.checkpoint);
  write_losses(out / "deblur_loss.txt", res.losses);
  std::cout << "steps " << res.losses.size() << ", final loss "
            << (res.losses.empty() ? 0.0 : res.losses.back()) << "\n";
  return 0;
}

int cmd_train_enhance(const Common& common, const std::string& manifest_path,
                      const std::string& ckpt_path) {
  RunConfig cfg = common.load();
  Dataset data = load_dataset(read_manifest(manifest_path));
  Checkpoint deblur_ck = load_checkpoint(ckpt_path);
  warn_fingerprint(deblur_ck, cfg);
  TrainResult res = train_enhance(data, cfg, deblur_ck);
  fs::path out = common.out();
  save_checkpoint((out / "model.ckpt").string(), res.checkpoint);
  write_losses(out / "enhance_loss.txt", res.losses);
  std::cout << "steps " << res.losses.size() << ", final loss "
            << (res.losses.empty() ? 0.0 : res.losses.back()) << "\n";
  return 0;
}

int cmd_infer(const Common& common, const std::string& long_path,
              const std::string& short_path, const std::string& ckpt_path) {
  RunConfig cfg = common.load();
  Checkpoint ck = load_checkpoint(ckpt_path);
  warn_fingerprint(ck, cfg);
  TensorF l_n = read_png(long_path);
  TensorF s_n = read_png(short_path);
  DeblurNet deblur = deblur_from(cfg, ck);
  InferenceConfig icfg;
  icfg.deblur_resolution = cfg.integer("model.deblur_resolution");
  icfg.alpha = cfg.num("model.alpha");
  TwoPhaseResult res;
  if (has_stage2(ck)) {
    EnhanceNet enhance = enhance_from(cfg, ck);
    res = two_phase_infer(l_n, s_n, deblur, &enhance, icfg);
  } else {
    res = two_phase_infer(l_n, s_n, deblur, nullptr, icfg);
  }
  fs::path out = common.out();
  write_png((out / "y.png").string(), res.y);
  TensorF t_clamped = res.t;
  t_clamped.clamp_(0.f, 1.f);
  write_png((out / "t.png").string(), t_clamped);
  std::cout << "wrote " << (out / "y.png") << " and " << (out / "t.png") << "\n";
  return 0;
}

int cmd_eval(const Common& common, const std::string& manifest_path,
             const std::string& ckpt_path) {
  RunConfig cfg = common.load();
  Dataset data = load_dataset(read_manifest(manifest_path));
  Checkpoint ck = load_checkpoint(ckpt_path);
  warn_fingerprint(ck, cfg);
  DeblurNet deblur = deblur_from(cfg, ck);
  EvalReport rep;
  if (has_stage2(ck)) {
    EnhanceNet enhance = enhance_from(cfg, ck);
    rep = evaluate(data, deblur, &enhance, cfg);
  } else {
    rep = evaluate(data, deblur, nullptr, cfg);
  }
  fs::path out = common.out();
  std::ofstream f(out / "report.tsv", std::ios::trunc);
  f << rep.to_tsv();
  std::cout << "mean PSNR " << rep.mean_psnr << " dB, mean SSIM "
            << rep.mean_ssim << " (noisy-short baseline "
            << rep.mean_psnr_noisy_short << " dB)\n";
  return 0;
}

int cmd_ablate(const Common& common, const std::string& manifest_path,
               const std::string& eval_manifest_path,
               const std::string& which) {
  RunConfig cfg = common.load();
  Manifest train_m = read_manifest(manifest_path);
  Manifest eval_m = eval_manifest_path.empty()
                        ? train_m
                        : read_manifest(eval_manifest_path);
  Dataset train_data = load_dataset(train_m);
  Dataset eval_data = load_dataset(eval_m);

  // VarmapSelection off = drop the crop rows the selector appended.
  Manifest plain = train_m;
  plain.records.erase(
      std::remove_if(plain.records.begin(), plain.records.end(),
                     [](const TupleRecord& r) { return r.crop_side > 0; }),
      plain.records.end());
  Dataset plain_data = load_dataset(plain);

  std::vector<std::string> wanted;
  std::istringstream ws(which);
  for (std::string tok; std::getline(ws, tok, ',');)
    if (!tok.empty()) wanted.push_back(tok);

  fs::path out = common.out();
  std::ofstream f(out / "ablation.tsv", std::ios::trunc);
  f << std::setprecision(10) << "setting\tpsnr_db\tssim\tstage2\n";
  for (const auto& setting : ablation_settings()) {
    if (!wanted.empty() && wanted[0] != "all" &&
        std::find(wanted.begin(), wanted.end(), setting.name) == wanted.end())
      continue;
    const Dataset& td =
        setting.name == "no_varmap_selection" ? plain_data : train_data;
    AblationRow row = run_ablation_setting(setting, td, eval_data, cfg);
    f << row.name << '\t' << row.psnr << '\t' << row.ssim << '\t'
      << (row.stage2 ? "yes" : "no") << "\n";
    std::cout << row.name << ": " << row.psnr << " dB / " << row.ssim << "\n";
  }
  return 0;
}

bool report(const std::string& name, bool ok) {
  std::cout << (ok ? "PASS" : "FAIL") << " " << name << "\n";
  return ok;
}

int cmd_gradcheck(const Common& common) {
  common.load();  // validates the config file when given
  bool all = true;
  Rng rng(20240612);

  {
    auto x = random_tensor(rng, 1, 2, 5, 5);
    auto w = random_tensor(rng, 3, 2, 3, 3, -0.5, 0.5);
    auto b = random_tensor(rng, 1, 3, 1, 1, -0.1, 0.1);
    auto rep = gradient_check(
        [](TapeD& t, const std::vector<TapeD::Id>& in) {
          ConvSpec sp;
          sp.stride = 1;
          sp.pad = 1;
          auto y = t.conv2d(in[0], in[1], in[2], sp);
          return t.l1_loss(y, TensorD::full(1, 3, 5, 5, 0.7));
        },
        {x, w, b});
    all &= report("gradcheck conv2d (rel err " + std::to_string(rep.worst) + ")",
                  rep.worst < 1e-4);
  }
  {
    // Offsets away from integer kinks of the bilinear sampler.
    auto x = random_tensor(rng, 1, 1, 6, 6);
    auto w = random_tensor(rng, 2, 1, 3, 3, -0.5, 0.5);
    auto b = random_tensor(rng, 1, 2, 1, 1, -0.1, 0.1);
    TensorD off(1, 18, 6, 6);
    Rng orng(7);
    for (auto& v : off.data) v = orng.uniform(0.2, 0.4);
    TensorD mk(1, 9, 6, 6);
    for (auto& v : mk.data) v = orng.uniform(-0.5, 0.5);
    auto rep = gradient_check(
        [](TapeD& t, const std::vector<TapeD::Id>& in) {
          auto m = t.sigmoid(in[4]);
          auto y = t.deform_conv2d(in[0], in[1], in[2], in[3], m);
          return t.l1_loss(y, TensorD::full(1, 2, 6, 6, 0.3));
        },
        {x, w, b, off, mk});
    all &= report("gradcheck deform_conv2d (rel err " + std::to_string(rep.worst) + ")",
                  rep.worst < 1e-3);
  }
  {
    auto x = random_tensor(rng, 1, 3, 4, 4);
    auto rep = gradient_check(
        [](TapeD& t, const std::vector<TapeD::Id>& in) {
          return t.l1_loss(t.idwt2(t.dwt2(in[0])), TensorD::full(1, 3, 4, 4, 2.0));
        },
        {x});
    all &= report("gradcheck dwt2/idwt2 (rel err " + std::to_string(rep.worst) + ")",
                  rep.worst < 1e-4);
  }
  {
    auto x = random_tensor(rng, 1, 2, 4, 4);
    auto rep = gradient_check(
        [](TapeD& t, const std::vector<TapeD::Id>& in) {
          auto y = t.sigmoid(t.leaky_relu(t.bilinear_resize(in[0], 7, 5), 0.2));
          return t.l1_loss(y, TensorD::full(1, 2, 7, 5, 2.0));
        },
        {x});
    all &= report("gradcheck resize/lrelu/sigmoid (rel err " +
                      std::to_string(rep.worst) + ")",
                  rep.worst < 1e-4);
  }
  if (!all) throw invariant_failure{};
  return 0;
}

int cmd_selftest(const Common& common) {
  common.load();
  bool all = true;
  Rng rng(77);

  {
    // Deformable degeneracy: zero offsets, unit mask == plain convolution.
    bool ok = true;
    double worst = 0;
    for (int trial = 0; trial < 10 && ok; ++trial) {
      TapeF tape;
      TensorF x(1, 2, 6, 6), w(3, 2, 3, 3), b(1, 3, 1, 1);
      for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
      for (auto& v : w.data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
      for (auto& v : b.data) v = static_cast<float>(rng.uniform(-0.1, 0.1));
      auto xi = tape.leaf(x), wi = tape.leaf(w), bi = tape.leaf(b);
      auto off = tape.leaf(TensorF::zeros(1, 18, 6, 6));
      auto mask = tape.leaf(TensorF::full(1, 9, 6, 6, 1.0f));
      ConvSpec sp;
      sp.stride = 1;
      sp.pad = 1;
      const TensorF& a = tape.value(tape.deform_conv2d(xi, wi, bi, off, mask));
      const TensorF& c = tape.value(tape.conv2d(xi, wi, bi, sp));
      for (size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.data[i]) - c.data[i]));
      ok = worst < 1e-5;
    }
    all &= report("deform-conv degeneracy (max diff " + std::to_string(worst) + ")", ok);
  }
  {
    // DWT perfect reconstruction.
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
      TapeF tape;
      TensorF x(1, 3, 8, 8);
      for (auto& v : x.data) v = static_cast<float>(rng.uniform(-2, 2));
      const TensorF& y = tape.value(tape.idwt2(tape.dwt2(tape.leaf(x))));
      for (size_t i = 0; i < x.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(y.data[i]) - x.data[i]));
    }
    all &= report("dwt round trip (max diff " + std::to_string(worst) + ")",
                  worst < 1e-6);
  }
  {
    // ISP round trip on a smooth gradient.
    IspParams p;
    TensorF x(1, 3, 64, 64);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 64; ++y)
        for (int xx = 0; xx < 64; ++xx)
          x.at(0, c, y, xx) = 0.1f + 0.8f * xx / 63.0f;
    TensorF rt = process(unprocess(x, p), p);
    double mse = 0;
    int64_t cnt = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 4; y < 60; ++y)
        for (int xx = 4; xx < 60; ++xx) {
          double d = x.at(0, c, y, xx) - rt.at(0, c, y, xx);
          mse += d * d;
          ++cnt;
        }
    double db = 10 * std::log10(1.0 / std::max(mse / cnt, 1e-300));
    all &= report("isp round trip (" + std::to_string(db) + " dB)", db > 40);
  }
  {
    // Gradient checks (condensed).
    auto x = random_tensor(rng, 1, 2, 6, 6);
    auto w = random_tensor(rng, 2, 2, 3, 3, -0.5, 0.5);
    auto b = random_tensor(rng, 1, 2, 1, 1, -0.1, 0.1);
    auto rep = gradient_check(
        [](TapeD& t, const std::vector<TapeD::Id>& in) {
          ConvSpec sp;
          sp.stride = 1;
          sp.pad = 1;
          auto y = t.leaky_relu(t.conv2d(in[0], in[1], in[2], sp), 0.2);
          return t.l1_loss(t.idwt2(t.dwt2(y)), TensorD::full(1, 2, 6, 6, 0.8));
        },
        {x, w, b});
    all &= report("gradient check (rel err " + std::to_string(rep.worst) + ")",
                  rep.worst < 1e-4);
  }
  if (!all) throw invariant_failure{};
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"d2h: two-phase dual-exposure night image restoration"};
  app.require_subcommand(1);
  app.footer("Config keys (defaults shown):\n" + RunConfig::describe());

  Common common;
  std::string frames_dir, manifest_path, eval_manifest_path, ckpt_path;
  std::string long_path, short_path, last_path, image_path, which = "all";
  int procedural = 0, frame_count = 24, frame_size = 96, index = 0;
  double iso = 0;
  bool short_exposure = false;
  int rc = 0;

  auto* synth = app.add_subcommand("synth", "synthesize exposure tuples from frames");
  common.attach(synth);
  synth->add_option("--frames", frames_dir, "directory of ordered PNG frames");
  synth->add_option("--procedural", procedural, "also generate N procedural videos");
  synth->add_option("--frame-count", frame_count, "frames per procedural video");
  synth->add_option("--frame-size", frame_size, "procedural frame side in pixels");
  synth->callback([&] { rc = cmd_synth(common, frames_dir, procedural, frame_count, frame_size); });

  auto* varmap = app.add_subcommand("varmap", "variance blur map for one tuple");
  common.attach(varmap);
  varmap->add_option("--long", long_path, "long-exposure image l")->required();
  varmap->add_option("--last", last_path, "last long-window frame l_last")->required();
  varmap->callback([&] { rc = cmd_varmap(common, long_path, last_path); });

  auto* select = app.add_subcommand("select", "VarmapSelection over a manifest");
  common.attach(select);
  select->add_option("--manifest", manifest_path, "tuple manifest")->required();
  select->callback([&] { rc = cmd_select(common, manifest_path); });

  auto* preview = app.add_subcommand("augment-preview", "augmented sample for one record");
  common.attach(preview);
  preview->add_option("--manifest", manifest_path, "tuple manifest")->required();
  preview->add_option("--index", index, "record index");
  preview->callback([&] { rc = cmd_augment_preview(common, manifest_path, index); });

  auto* noise = app.add_subcommand("noise-sim", "unprocess/noise/process one image");
  common.attach(noise);
  noise->add_option("--image", image_path, "input PNG")->required();
  noise->add_option("--iso", iso, "ISO (default: middle of the configured range)");
  noise->add_flag("--short-exposure", short_exposure, "use the short-exposure ISO range");
  noise->callback([&] { rc = cmd_noise_sim(common, image_path, iso, short_exposure); });

  auto* td = app.add_subcommand("train-deblur", "stage 1: train DeblurNet");
  common.attach(td);
  td->add_option("--manifest", manifest_path, "training manifest")->required();
  td->callback([&] { rc = cmd_train_deblur(common, manifest_path); });

  auto* te = app.add_subcommand("train-enhance", "stage 2: train EnhanceNet");
  common.attach(te);
  te->add_option("--manifest", manifest_path, "training manifest")->required();
  te->add_option("--checkpoint", ckpt_path, "stage-1 checkpoint")->required();
  te->callback([&] { rc = cmd_train_enhance(common, manifest_path, ckpt_path); });

  auto* infer = app.add_subcommand("infer", "restore one long/short pair");
  common.attach(infer);
  infer->add_option("--long", long_path, "noisy long exposure PNG")->required();
  infer->add_option("--short", short_path, "noisy short exposure PNG")->required();
  infer->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  infer->callback([&] { rc = cmd_infer(common, long_path, short_path, ckpt_path); });

  auto* eval = app.add_subcommand("eval", "PSNR/SSIM over a manifest");
  common.attach(eval);
  eval->add_option("--manifest", manifest_path, "evaluation manifest")->required();
  eval->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  eval->callback([&] { rc = cmd_eval(common, manifest_path, ckpt_path); });

  auto* ablate = app.add_subcommand("ablate", "train+eval the ablation table rows");
  common.attach(ablate);
  ablate->add_option("--manifest", manifest_path, "training manifest")->required();
  ablate->add_option("--eval-manifest", eval_manifest_path, "held-out manifest");
  ablate->add_option("--settings", which, "comma-separated row names, or 'all'");
  ablate->callback([&] { rc = cmd_ablate(common, manifest_path, eval_manifest_path, which); });

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  common.attach(gc, /*config_required=*/false);
  gc->callback([&] { rc = cmd_gradcheck(common); });

  auto* st = app.add_subcommand("selftest", "run the invariant suite");
  common.attach(st, /*config_required=*/false);
  st->callback([&] { rc = cmd_selftest(common); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const invariant_failure&) {
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}

#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2h {

/// One config key: section, name, default (as text), doc line. The schema
/// below is the single source of truth for every tunable; --help and the
/// typo guard are both generated from it.
struct ConfigKey {
  const char* section;
  const char* key;
  const char* def;
  const char* doc;
};

inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      // exposure synthesis
      {"synth", "interp_factor", "8", "frames inserted between captured frames (linear cross-fade)"},
      {"synth", "long_frames", "64", "interpolated frames averaged into the long exposure"},
      {"synth", "gap_frames", "8", "readout gap between the two exposure windows"},
      {"synth", "short_frames", "8", "interpolated frames averaged into the short exposure"},
      {"synth", "stride", "96", "window start stride in interpolated frames"},
      // inverse/forward ISP
      {"isp", "gamma", "2.2", "gamma used for ISP inversion"},
      {"isp", "wr_min", "1.9", "red white-balance gain, lower bound"},
      {"isp", "wr_max", "2.4", "red white-balance gain, upper bound"},
      {"isp", "wb_min", "1.5", "blue white-balance gain, lower bound"},
      {"isp", "wb_max", "1.9", "blue white-balance gain, upper bound"},
      // sensor noise model
      {"noise", "enabled", "1", "0 disables noise injection entirely"},
      {"noise", "k_iso", "1e-5", "system gain slope: K = k_iso * ISO (signal-referred)"},
      {"noise", "r0", "0.0005", "read noise sigma intercept"},
      {"noise", "r1", "1e-6", "read noise sigma slope per ISO"},
      {"noise", "row0", "0.0002", "row noise sigma intercept"},
      {"noise", "row1", "2e-7", "row noise sigma slope per ISO"},
      {"noise", "q", "0.000977517", "quantization step (default 1/1023, 10-bit)"},
      {"noise", "iso_long_min", "1000", "long-exposure ISO range lower bound"},
      {"noise", "iso_long_max", "4000", "long-exposure ISO range upper bound"},
      {"noise", "iso_short_min", "6400", "short-exposure ISO range lower bound"},
      {"noise", "iso_short_max", "12800", "short-exposure ISO range upper bound"},
      // training-data schemes
      {"augment", "p_ia", "0.3", "Illumination Adjustment probability"},
      {"augment", "p_ca", "0.5", "Color Adjustment probability"},
      {"augment", "p_cutnoise", "0.3", "CutNoise probability"},
      {"augment", "ca_a_min", "0.3", "Color Adjustment scale lower bound"},
      {"augment", "ca_a_max", "0.6", "Color Adjustment scale upper bound"},
      {"augment", "ca_b_min", "0.001", "Color Adjustment offset lower bound"},
      {"augment", "ca_b_max", "0.01", "Color Adjustment offset upper bound"},
      {"augment", "varmap_window", "8", "variance map window/stride k"},
      {"augment", "percentile", "5", "blur-selection percentile threshold"},
      {"augment", "samples_per_map", "1000", "random squares sampled per variance map"},
      {"augment", "square_side", "32", "selection square side in pixels"},
      {"augment", "crop_size", "64", "training crop side"},
      {"augment", "cutnoise_side", "30", "CutNoise square side (paper ratio 120/256 of the crop)"},
      // model
      {"model", "deblur_base", "32", "DeblurNet base channel width"},
      {"model", "enhance_base", "16", "EnhanceNet base channel width"},
      {"model", "deblur_resolution", "256", "fixed DeblurNet resolution R at inference"},
      {"model", "alpha", "0.5", "training-time downsample ratio for DeblurNet"},
      // training
      {"train", "deblur_epochs", "2", "DeblurNet epochs"},
      {"train", "enhance_epochs", "2", "EnhanceNet epochs"},
      {"train", "deblur_lr", "1e-4", "DeblurNet initial learning rate"},
      {"train", "enhance_lr", "5e-5", "EnhanceNet initial learning rate"},
      {"train", "lr_halve_period", "50", "epochs between halvings of the learning rate"},
      {"train", "batch_size", "2", "samples per optimization step"},
      {"train", "beta1", "0.5", "Adam beta1"},
      {"train", "beta2", "0.999", "Adam beta2"},
      {"train", "eps", "1e-8", "Adam epsilon"},
      {"train", "seed", "1234", "master seed for init, shuffling and augmentation"},
      {"train", "steps_per_epoch", "0", "0 = one pass over the manifest"},
      // evaluation
      {"eval", "noise_seed", "99", "seed for cached validation noise"},
  };
  return schema;
}

/// Flat section.key -> string map with schema-validated parsing. Typed
/// accessors convert on demand.
class RunConfig {
 public:
  /// Schema defaults only.
  static RunConfig defaults() {
    RunConfig c;
    for (const auto& k : config_schema())
      c.values_[std::string(k.section) + "." + k.key] = k.def;
    return c;
  }

  /// Defaults overlaid with a [section] / key = value file. Unknown
  /// sections or keys are an error.
  static RunConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  static RunConfig parse(const std::string& text) {
    RunConfig c = defaults();
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = trim(line);
      if (s.empty() || s[0] == '#' || s[0] == ';') continue;
      if (s.front() == '[' && s.back() == ']') {
        section = trim(s.substr(1, s.size() - 2));
        continue;
      }
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config: line " + std::to_string(lineno) +
                                 ": expected key = value");
      std::string key = trim(s.substr(0, eq));
      std::string val = trim(s.substr(eq + 1));
      std::string full = section.empty() ? key : section + "." + key;
      if (!c.values_.count(full))
        throw std::runtime_error("config: unknown key '" + full + "' at line " +
                                 std::to_string(lineno));
      c.values_[full] = val;
    }
    return c;
  }

  const std::string& str(const std::string& full) const {
    auto it = values_.find(full);
    if (it == values_.end())
      throw std::runtime_error("config: no such key " + full);
    return it->second;
  }

  double num(const std::string& full) const {
    const std::string& s = str(full);
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size())
      throw std::runtime_error("config: key " + full + " is not a number: " + s);
    return v;
  }

  int integer(const std::string& full) const {
    double v = num(full);
    int iv = static_cast<int>(v);
    if (static_cast<double>(iv) != v)
      throw std::runtime_error("config: key " + full + " must be an integer");
    return iv;
  }

  void set(const std::string& full, const std::string& val) {
    if (!values_.count(full))
      throw std::runtime_error("config: unknown key " + full);
    values_[full] = val;
  }

  /// Canonical text: sections and keys sorted, one "section.key = value" per
  /// line. The fingerprint embedded in checkpoints and reports is the CRC32
  /// of this text.
  std::string canonical_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  uint32_t fingerprint() const {
    std::string t = canonical_text();
    return static_cast<uint32_t>(
        ::crc32(0, reinterpret_cast<const Bytef*>(t.data()),
                static_cast<uInt>(t.size())));
  }

  /// Key list with defaults and docs, for --help.
  static std::string describe() {
    std::string out;
    for (const auto& k : config_schema())
      out += std::string("  ") + k.section + "." + k.key + " = " + k.def +
             "\n      " + k.doc + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }
  std::map<std::string, std::string> values_;
};

}  // namespace d2h

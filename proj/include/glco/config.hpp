#pragma once

// Flat key=value run configuration. Lines may carry `#` comments; unknown
// and repeated keys are rejected.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "glco/decoder.hpp"
#include "glco/error.hpp"
#include "glco/objective.hpp"
#include "glco/synth.hpp"

namespace glco {

enum class Precision { kFloat32, kFloat64 };

// Defaults are desk scale (64x64 inputs, width 16, batch 4). The original
// large-scale setting is channels=128, input_size=384, batch=36, epochs=180.
struct RunConfig {
  // model
  std::size_t channels = 16;
  std::vector<std::size_t> scale_set{3, 5, 7};
  FusionMode fusion_mode = FusionMode::kAdd;
  bool gpm = true;
  bool lrm = true;
  bool ghim = true;
  bool ard = true;
  bool mtb_head = true;
  ExpandMode expand_mode = ExpandMode::kPixelShuffle;
  std::vector<std::size_t> encoder_widths{16, 32, 64, 128, 160};
  // optimisation
  std::size_t input_size = 64;
  std::size_t batch = 4;
  std::size_t epochs = 40;
  std::size_t max_steps = 0;  // 0 = no cap
  double lr = 1e-4;
  std::size_t decay_every = 60;
  double decay_factor = 0.1;
  bool hflip = true;
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat32;
  // paths
  std::string data_dir = "data";
  std::string out_dir = "run";
  std::string checkpoint;
  std::string resume;
  std::string image;
  std::string pred_dir;
  std::string gt_dir;
  bool dump_levels = false;
  // synthetic data
  std::size_t synth_count = 8;
  std::size_t synth_extent = 64;
  ShapeFamily synth_family = ShapeFamily::kBlob;
  double synth_strength = 0.0;
  double synth_occlusion = 0.0;
  // tooling
  std::size_t gradcheck_channels = 16;
  std::size_t bench_iters = 3;

  bool operator==(const RunConfig&) const = default;

  ModelConfig model_config() const {
    ModelConfig m;
    m.channels = channels;
    m.scales = scale_set;
    m.fusion = fusion_mode;
    m.gpm = gpm;
    m.lrm = lrm;
    m.ghim = ghim;
    m.ard = ard;
    m.mtb_head = mtb_head;
    m.expand = expand_mode;
    if (encoder_widths.size() != 5) throw ConfigError("encoder_widths needs five entries");
    std::copy(encoder_widths.begin(), encoder_widths.end(), m.encoder_widths.begin());
    return m;
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.lr = lr;
    a.decay_every = decay_every;
    a.decay_factor = decay_factor;
    return a;
  }

  SynthSpec synth() const {
    SynthSpec s;
    s.seed = seed;
    s.count = synth_count;
    s.extent = synth_extent;
    s.family = synth_family;
    s.strength = synth_strength;
    s.occlusion = synth_occlusion;
    return s;
  }

  void validate() const {
    model_config().validate();
    if (input_size == 0 || input_size % 32 != 0) throw ConfigError("input_size must be a positive multiple of 32");
    if (batch == 0) throw ConfigError("batch must be positive");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (decay_every == 0) throw ConfigError("decay_every must be positive");
    if (!(decay_factor > 0 && decay_factor <= 1)) throw ConfigError("decay_factor must lie in (0,1]");
    synth().validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

inline std::string format_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct ConfigField {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every key, in serialization order.
inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
  using F = ConfigField;
  auto size_field = [](std::size_t RunConfig::*m, const char* key) {
    return F{[m, key](RunConfig& c, const std::string& v) { c.*m = parse_number<std::size_t>(key, v); },
             [m](const RunConfig& c) { return std::to_string(c.*m); }};
  };
  auto double_field = [](double RunConfig::*m, const char* key) {
    return F{[m, key](RunConfig& c, const std::string& v) { c.*m = parse_number<double>(key, v); },
             [m](const RunConfig& c) { return format_double(c.*m); }};
  };
  auto bool_field = [](bool RunConfig::*m, const char* key) {
    return F{[m, key](RunConfig& c, const std::string& v) { c.*m = parse_bool(key, v); },
             [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
  };
  auto string_field = [](std::string RunConfig::*m) {
    return F{[m](RunConfig& c, const std::string& v) { c.*m = v; }, [m](const RunConfig& c) { return c.*m; }};
  };
  auto list_field = [](std::vector<std::size_t> RunConfig::*m, const char* key) {
    return F{[m, key](RunConfig& c, const std::string& v) { c.*m = parse_list(key, v); },
             [m](const RunConfig& c) { return format_list(c.*m); }};
  };
  static const std::vector<std::pair<std::string, F>> fields{
      {"channels", size_field(&RunConfig::channels, "channels")},
      {"scale_set", list_field(&RunConfig::scale_set, "scale_set")},
      {"fusion_mode",
       F{[](RunConfig& c, const std::string& v) {
           if (v == "add") c.fusion_mode = FusionMode::kAdd;
           else if (v == "cat") c.fusion_mode = FusionMode::kConcat;
           else throw ConfigError("config key 'fusion_mode': expected add|cat, got '" + v + "'");
         },
         [](const RunConfig& c) { return std::string(c.fusion_mode == FusionMode::kAdd ? "add" : "cat"); }}},
      {"gpm", bool_field(&RunConfig::gpm, "gpm")},
      {"lrm", bool_field(&RunConfig::lrm, "lrm")},
      {"ghim", bool_field(&RunConfig::ghim, "ghim")},
      {"ard", bool_field(&RunConfig::ard, "ard")},
      {"mtb_head", bool_field(&RunConfig::mtb_head, "mtb_head")},
      {"expand_mode",
       F{[](RunConfig& c, const std::string& v) {
           if (v == "shuffle") c.expand_mode = ExpandMode::kPixelShuffle;
           else if (v == "bilinear") c.expand_mode = ExpandMode::kBilinear;
           else throw ConfigError("config key 'expand_mode': expected shuffle|bilinear, got '" + v + "'");
         },
         [](const RunConfig& c) {
           return std::string(c.expand_mode == ExpandMode::kPixelShuffle ? "shuffle" : "bilinear");
         }}},
      {"encoder_widths", list_field(&RunConfig::encoder_widths, "encoder_widths")},
      {"input_size", size_field(&RunConfig::input_size, "input_size")},
      {"batch", size_field(&RunConfig::batch, "batch")},
      {"epochs", size_field(&RunConfig::epochs, "epochs")},
      {"max_steps", size_field(&RunConfig::max_steps, "max_steps")},
      {"lr", double_field(&RunConfig::lr, "lr")},
      {"decay_every", size_field(&RunConfig::decay_every, "decay_every")},
      {"decay_factor", double_field(&RunConfig::decay_factor, "decay_factor")},
      {"hflip", bool_field(&RunConfig::hflip, "hflip")},
      {"seed",
       F{[](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
         [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"precision",
       F{[](RunConfig& c, const std::string& v) {
           if (v == "float32") c.precision = Precision::kFloat32;
           else if (v == "float64") c.precision = Precision::kFloat64;
           else throw ConfigError("config key 'precision': expected float32|float64, got '" + v + "'");
         },
         [](const RunConfig& c) {
           return std::string(c.precision == Precision::kFloat32 ? "float32" : "float64");
         }}},
      {"data_dir", string_field(&RunConfig::data_dir)},
      {"out_dir", string_field(&RunConfig::out_dir)},
      {"checkpoint", string_field(&RunConfig::checkpoint)},
      {"resume", string_field(&RunConfig::resume)},
      {"image", string_field(&RunConfig::image)},
      {"pred_dir", string_field(&RunConfig::pred_dir)},
      {"gt_dir", string_field(&RunConfig::gt_dir)},
      {"dump_levels", bool_field(&RunConfig::dump_levels, "dump_levels")},
      {"synth_count", size_field(&RunConfig::synth_count, "synth_count")},
      {"synth_extent", size_field(&RunConfig::synth_extent, "synth_extent")},
      {"synth_family",
       F{[](RunConfig& c, const std::string& v) { c.synth_family = parse_family(v); },
         [](const RunConfig& c) { return family_name(c.synth_family); }}},
      {"synth_strength", double_field(&RunConfig::synth_strength, "synth_strength")},
      {"synth_occlusion", double_field(&RunConfig::synth_occlusion, "synth_occlusion")},
      {"gradcheck_channels", size_field(&RunConfig::gradcheck_channels, "gradcheck_channels")},
      {"bench_iters", size_field(&RunConfig::bench_iters, "bench_iters")},
  };
  return fields;
}

inline const ConfigField* find_field(const std::string& key) {
  for (const auto& [k, f] : config_fields())
    if (k == key) return &f;
  return nullptr;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::config_fields()) keys.push_back(k);
  return keys;
}

/// Applies one `key=value` assignment on top of `cfg`.
inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto* field = detail::find_field(key);
  if (!field) throw ConfigError("unknown config key '" + key + "'");
  field->set(cfg, value);
}

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh)
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key + "' already set on line " +
                        std::to_string(it->second));
    try {
      apply_config_entry(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::config_fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

}  // namespace glco

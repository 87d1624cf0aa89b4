#pragma once

// Configuration, subcommands and file emission for the `pinet` tool.
//
// A configuration is a set of typed keys per subcommand. Values come from
// built-in defaults, then an optional INI-style file, then command-line flags,
// and each key remembers which of the three it came from. Every file a
// subcommand writes starts with '#' comment lines carrying the tool version,
// the configuration hash, the master seed and the full resolved configuration
// (as "#@ " lines), so `pinet replay <file>` regenerates it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pinet/autodiff.hpp"
#include "pinet/csv.hpp"
#include "pinet/errors.hpp"
#include "pinet/experiments.hpp"
#include "pinet/kernels.hpp"
#include "pinet/network_spec.hpp"
#include "pinet/networks.hpp"
#include "pinet/random.hpp"
#include "pinet/spectral.hpp"

#ifndef PINET_VERSION
#define PINET_VERSION "0.1.0"
#endif

namespace pinet::cli {

inline constexpr const char* kVersion = PINET_VERSION;
inline constexpr const char* kOutDirEnv = "PINET_OUT_DIR";

enum class ValueType { Int, Real, Bool, String, IntList, RealList, RealOrAuto };

inline const char* type_name(ValueType t) {
  switch (t) {
    case ValueType::Int: return "integer";
    case ValueType::Real: return "real";
    case ValueType::Bool: return "boolean";
    case ValueType::String: return "string";
    case ValueType::IntList: return "integer list";
    case ValueType::RealList: return "real list";
    case ValueType::RealOrAuto: return "real or 'auto'";
  }
  return "?";
}

struct KeyDef {
  std::string name;
  ValueType type;
  std::string default_value;
  std::string help;
};

enum class Provenance { Default, File, Flag };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::Default: return "default";
    case Provenance::File: return "file";
    case Provenance::Flag: return "flag";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Schema

namespace detail {

inline std::vector<KeyDef> network_keys(const std::string& arch, int width, int depth, const std::string& mult,
                                        const std::string& injection) {
  return {
      {"arch", ValueType::String, arch, "mlp | pi-ncp"},
      {"width", ValueType::Int, std::to_string(width), "hidden width"},
      {"depth", ValueType::Int, std::to_string(depth), "number of affine layers"},
      {"mult_layers", ValueType::IntList, mult, "1-based multiplicative layers (pi-ncp)"},
      {"skips", ValueType::Bool, "false", "additive skip connections (mlp)"},
      {"injection", ValueType::String, injection, "block | network: input of the multiplicative branch"},
      {"placement", ValueType::String, "affine-branch", "affine-branch | after-product"},
      {"mult_bias", ValueType::Real, "1", "initial bias of the multiplicative branch"},
  };
}

inline std::vector<KeyDef> sinusoid_keys() {
  return {
      {"frequencies", ValueType::IntList, "5,10,15,20,25,30,35,40,45,50", "target frequencies"},
      {"amplitudes", ValueType::RealList, "", "target amplitudes (default all 1)"},
      {"samples", ValueType::Int, "200", "grid size N"},
      {"centered", ValueType::Bool, "true", "map the grid j/N to [-1, 1)"},
      {"lr", ValueType::Real, "0.001", "learning rate"},
      {"lr_mult", ValueType::RealOrAuto, "auto", "multiplicative-branch learning rate (auto = lr/10)"},
      {"iterations", ValueType::Int, "3000", "gradient steps"},
      {"record_every", ValueType::Int, "100", "checkpoint spacing"},
  };
}

inline std::vector<KeyDef> join(std::vector<std::vector<KeyDef>> parts) {
  std::vector<KeyDef> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline const std::map<std::string, std::vector<KeyDef>>& schemas() {
  static const std::map<std::string, std::vector<KeyDef>> s = [] {
    std::map<std::string, std::vector<KeyDef>> m;
    const KeyDef seed{"seed", ValueType::Int, "0", "master seed"};
    m["kernel-eval"] = {seed,
                        {"kernel", ValueType::String, "standard", "standard | pi | kappa1 | kappa2 | linear | constant"},
                        {"t", ValueType::Real, "0", "cosine similarity in [-1, 1]"}};
    m["empirical-ntk"] = {seed,
                          {"arch", ValueType::String, "two-layer-pi", "two-layer-relu | two-layer-pi"},
                          {"width", ValueType::Int, "1024", "hidden width m"},
                          {"d", ValueType::Int, "3", "sphere dimension (inputs in R^{d+1})"},
                          {"t", ValueType::Real, "0.5", "cosine between the two inputs"},
                          {"draws", ValueType::Int, "100", "independent initializations"}};
    m["spectrum"] = {seed,
                     {"kernel", ValueType::String, "pi", "kernel name"},
                     {"d", ValueType::Int, "5", "sphere dimension"},
                     {"kmax", ValueType::Int, "40", "largest degree"},
                     {"nodes", ValueType::Int, "0", "quadrature nodes (0 = automatic)"}};
    m["decay-fit"] = {seed,
                      {"input", ValueType::String, "spectrum.csv", "spectrum CSV"},
                      {"class", ValueType::String, "all", "all | even | odd | mod4eq0..mod4eq3"},
                      {"kmin", ValueType::Int, "1", "smallest degree in the fit"},
                      {"kmax", ValueType::Int, "40", "largest degree in the fit"}};
    m["harmonics"] = {seed,
                      {"arch", ValueType::String, "two-layer-pi", "two-layer-relu | two-layer-pi"},
                      {"width", ValueType::Int, "8192", "hidden width"},
                      {"n", ValueType::Int, "1000", "training points"},
                      {"d", ValueType::Int, "10", "sphere dimension"},
                      {"degrees", ValueType::IntList, "1,2,4", "harmonic degrees K"},
                      {"amplitudes", ValueType::RealList, "", "per-degree amplitudes (default all 1)"},
                      {"normalizer", ValueType::String, "degree-count", "degree-count | unit-variance"},
                      {"lr", ValueType::RealOrAuto, "auto", "learning rate (auto = n / (2 lambda_max))"},
                      {"lr_mult", ValueType::RealOrAuto, "auto", "multiplicative learning rate (auto = lr)"},
                      {"iterations", ValueType::Int, "1500", "gradient steps"},
                      {"record_every", ValueType::Int, "1", "checkpoint spacing"},
                      {"seeds", ValueType::Int, "5", "runs"},
                      {"first_run", ValueType::Int, "0", "index of the first run"},
                      {"smoothing", ValueType::Int, "20", "moving-average window"},
                      {"threshold", ValueType::Real, "0.5", "fraction of the initial projection"},
                      {"heatmap", ValueType::Bool, "true", "write heatmap.svg"}};
    m["sinusoids"] = join({{seed},
                           network_keys("mlp", 256, 6, "1,2,3,4,5", "network"),
                           sinusoid_keys(),
                           {{"seeds", ValueType::Int, "5", "runs"},
                            {"first_run", ValueType::Int, "0", "index of the first run"},
                            {"threshold", ValueType::Real, "0.5", "amplitude-ratio threshold"},
                            {"heatmap", ValueType::Bool, "true", "write heatmap.svg"},
                            {"save_checkpoints", ValueType::Bool, "false", "write run_<i>.ckpt"}}});
    m["robustness"] = join({{seed},
                            network_keys("mlp", 256, 6, "1,2,3,4,5", "network"),
                            sinusoid_keys(),
                            {{"run", ValueType::Int, "0", "run index of the converged network"},
                             {"checkpoint", ValueType::String, "", "trained checkpoint (empty = train first)"},
                             {"deltas", ValueType::RealList, "0,0.5,1,2,4", "perturbation norms"},
                             {"perturbations", ValueType::Int, "1", "draws per delta"},
                             {"convergence", ValueType::Real, "0.8", "required amplitude ratio before perturbing"}}});
    m["gradcheck"] = join({{seed},
                           network_keys("pi-ncp", 8, 6, "1,2,3,4,5", "block"),
                           {{"input_dim", ValueType::Int, "4", "input dimension"},
                            {"batch", ValueType::Int, "5", "rows in the random batch"},
                            {"tol", ValueType::Real, "0.0001", "relative-error tolerance"}}});
    return m;
  }();
  return s;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    const double r = csv::parse_real(v);
    if (r != std::floor(r) || std::abs(r) > 9.0e15) throw std::invalid_argument("");
    return static_cast<long long>(r);
  } catch (const std::invalid_argument&) {
    throw ConfigError("type mismatch for key '" + key + "': expected integer, got '" + v + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    return csv::parse_real(v);
  } catch (const std::invalid_argument&) {
    throw ConfigError("type mismatch for key '" + key + "': expected real, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("type mismatch for key '" + key + "': expected boolean, got '" + v + "'");
}

inline std::vector<std::string> list_items(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  for (auto part : csv::split(v, ',')) out.push_back(trim(std::string(part)));
  return out;
}

// Canonical spelling of a value, used for the hash and the embedded header.
inline std::string normalize(const KeyDef& def, const std::string& raw) {
  const std::string v = trim(raw);
  switch (def.type) {
    case ValueType::Int: return std::to_string(parse_int(def.name, v));
    case ValueType::Real: return csv::format_real(parse_real(def.name, v));
    case ValueType::Bool: return parse_bool(def.name, v) ? "true" : "false";
    case ValueType::String: return v;
    case ValueType::RealOrAuto: return v == "auto" ? v : csv::format_real(parse_real(def.name, v));
    case ValueType::IntList:
    case ValueType::RealList: {
      std::string out;
      for (const auto& item : list_items(v)) {
        if (!out.empty()) out += ',';
        out += def.type == ValueType::IntList ? std::to_string(parse_int(def.name, item))
                                              : csv::format_real(parse_real(def.name, item));
      }
      return out;
    }
  }
  return v;
}

}  // namespace detail

inline std::vector<std::string> commands() {
  std::vector<std::string> out;
  for (const auto& [name, keys] : detail::schemas()) out.push_back(name);
  return out;
}

inline const std::vector<KeyDef>& schema(const std::string& command) {
  const auto& s = detail::schemas();
  const auto it = s.find(command);
  if (it == s.end()) throw ConfigError("unknown command: " + command);
  return it->second;
}

// ---------------------------------------------------------------------------
// RunConfig

struct RunConfig {
  struct Entry {
    std::string value;  // canonical spelling
    Provenance provenance = Provenance::Default;
    ValueType type = ValueType::String;
  };

  std::string command;
  std::map<std::string, Entry> parameters;
  std::uint64_t master_seed = 0;
  std::filesystem::path output_dir = ".";

  const Entry& entry(const std::string& key) const {
    const auto it = parameters.find(key);
    if (it == parameters.end()) throw ConfigError("missing key: " + key);
    return it->second;
  }

  Provenance provenance(const std::string& key) const { return entry(key).provenance; }
  const std::string& get_string(const std::string& key) const { return entry(key).value; }
  int get_int(const std::string& key) const { return static_cast<int>(detail::parse_int(key, entry(key).value)); }
  double get_real(const std::string& key) const { return detail::parse_real(key, entry(key).value); }
  bool get_bool(const std::string& key) const { return entry(key).value == "true"; }

  std::optional<double> get_real_or_auto(const std::string& key) const {
    const auto& v = entry(key).value;
    if (v == "auto") return std::nullopt;
    return detail::parse_real(key, v);
  }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& item : detail::list_items(entry(key).value))
      out.push_back(static_cast<int>(detail::parse_int(key, item)));
    return out;
  }

  std::vector<double> get_real_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : detail::list_items(entry(key).value)) out.push_back(detail::parse_real(key, item));
    return out;
  }

  // The resolved configuration as a config file for this command.
  std::string canonical() const {
    std::string s = "[" + command + "]\n";
    for (const auto& [k, e] : parameters) s += k + " = " + e.value + "\n";
    return s;
  }

  std::uint64_t hash() const { return pinet::detail::hash_label(canonical()); }

  std::string hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
  }
};

using FlagOverrides = std::vector<std::pair<std::string, std::string>>;

// Parses config text. Keys outside any section and keys in [common] or
// [<command>] apply; sections named after other subcommands are skipped so
// one file can configure several commands. Output directory resolution:
// flag `out`, then file key `out`, then $PINET_OUT_DIR, then ".".
inline RunConfig parse_config_text(const std::string& command, const std::string& text, const FlagOverrides& flags,
                                   const char* env_out_dir = std::getenv(kOutDirEnv)) {
  const auto& keys = schema(command);
  RunConfig cfg;
  cfg.command = command;
  for (const auto& def : keys) cfg.parameters[def.name] = {detail::normalize(def, def.default_value), Provenance::Default, def.type};

  auto lookup = [&](const std::string& key) -> const KeyDef& {
    for (const auto& def : keys)
      if (def.name == key) return def;
    throw ConfigError("unknown key: " + key);
  };

  std::optional<std::string> out_dir;
  std::istringstream is(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "common" && !detail::schemas().count(section))
        throw ConfigError("unknown section: " + section);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!section.empty() && section != "common" && section != command) continue;
    if (key == "out") {
      out_dir = value;
      continue;
    }
    cfg.parameters[key] = {detail::normalize(lookup(key), value), Provenance::File, lookup(key).type};
  }

  for (const auto& [key, value] : flags) {
    if (key == "out") {
      out_dir = value;
      continue;
    }
    cfg.parameters[key] = {detail::normalize(lookup(key), value), Provenance::Flag, lookup(key).type};
  }

  const auto seed = detail::parse_int("seed", cfg.parameters.at("seed").value);
  if (seed < 0) throw ConfigError("seed must be non-negative");
  cfg.master_seed = static_cast<std::uint64_t>(seed);
  if (out_dir)
    cfg.output_dir = *out_dir;
  else if (env_out_dir && *env_out_dir)
    cfg.output_dir = env_out_dir;
  return cfg;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunConfig parse_config(const std::string& command, const std::optional<std::filesystem::path>& file,
                              const FlagOverrides& flags, const char* env_out_dir = std::getenv(kOutDirEnv)) {
  if (file && !std::filesystem::exists(*file)) throw ConfigError("config file not found: " + file->string());
  return parse_config_text(command, file ? read_file(*file) : std::string(), flags, env_out_dir);
}

// Configuration embedded in an output file's "#@ " lines, and its command.
inline std::pair<std::string, std::string> embedded_config(const std::string& file_text) {
  std::istringstream is(file_text);
  std::string line, text, command;
  while (std::getline(is, line)) {
    if (line.rfind("#@ ", 0) != 0) continue;
    const std::string body = line.substr(3);
    if (command.empty() && body.size() > 2 && body.front() == '[' && body.back() == ']')
      command = body.substr(1, body.size() - 2);
    text += body + "\n";
  }
  if (command.empty()) throw ConfigError("no embedded configuration found");
  return {command, text};
}

inline void write_header(std::ostream& os, const RunConfig& cfg) {
  os << "# pinet " << kVersion << "\n"
     << "# command = " << cfg.command << "\n"
     << "# config_hash = " << cfg.hash_hex() << "\n"
     << "# master_seed = " << cfg.master_seed << "\n";
  std::istringstream is(cfg.canonical());
  std::string line;
  while (std::getline(is, line)) os << "#@ " << line << "\n";
}

// ---------------------------------------------------------------------------
// Heatmap

struct HeatmapData {
  std::vector<std::string> row_labels;  // top to bottom
  std::vector<std::string> col_labels;  // left to right
  std::vector<std::vector<double>> values;
  std::string x_label = "iteration";
  std::string y_label = "frequency";

  void validate() const {
    if (values.empty() || values.front().empty()) throw ShapeError("heatmap: empty matrix");
    if (values.size() != row_labels.size()) throw ShapeError("heatmap: row label count does not match matrix");
    for (const auto& r : values)
      if (r.size() != col_labels.size()) throw ShapeError("heatmap: column label count does not match matrix");
  }
};

inline constexpr double kHeatmapMax = 1.2;

namespace detail {

using Rgb = std::array<unsigned char, 3>;

// Perceptually ordered dark-blue to yellow ramp, expanded to 256 stops.
inline constexpr std::array<Rgb, 9> kAnchors{{{68, 1, 84},
                                             {71, 44, 122},
                                             {59, 81, 139},
                                             {44, 113, 142},
                                             {33, 144, 141},
                                             {39, 173, 129},
                                             {92, 200, 99},
                                             {170, 220, 50},
                                             {253, 231, 37}}};

constexpr std::array<Rgb, 256> make_lut() {
  std::array<Rgb, 256> lut{};
  for (int i = 0; i < 256; ++i) {
    const double pos = i * 8.0 / 255.0;
    int seg = static_cast<int>(pos);
    if (seg > 7) seg = 7;
    const double f = pos - seg;
    for (int c = 0; c < 3; ++c) {
      const double v = kAnchors[seg][c] + f * (kAnchors[seg + 1][c] - kAnchors[seg][c]);
      lut[i][c] = static_cast<unsigned char>(v + 0.5);
    }
  }
  return lut;
}

inline constexpr std::array<Rgb, 256> kColormap = make_lut();

inline std::string color_for(double v) {
  if (std::isnan(v)) return "#808080";
  const double c = std::clamp(v, 0.0, kHeatmapMax);
  const auto idx = static_cast<std::size_t>(std::lround(c / kHeatmapMax * 255.0));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", kColormap[idx][0], kColormap[idx][1], kColormap[idx][2]);
  return buf;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// Standalone SVG: rows top to bottom, columns left to right, values clipped to
// [0, 1.2] on a linear color bar with a tick at 1.0.
inline void render_heatmap(const HeatmapData& h, std::ostream& os) {
  h.validate();
  const std::size_t rows = h.values.size();
  const std::size_t cols = h.col_labels.size();
  const double left = 70, top = 30, bar_w = 16, bar_gap = 30, right = 60, bottom = 50;
  const double plot_w = std::clamp(12.0 * static_cast<double>(cols), 240.0, 960.0);
  const double cell_w = plot_w / static_cast<double>(cols);
  const double cell_h = std::clamp(320.0 / static_cast<double>(rows), 4.0, 24.0);
  const double plot_h = cell_h * static_cast<double>(rows);
  const double width = left + plot_w + bar_gap + bar_w + right;
  const double height = top + plot_h + bottom;
  using detail::num;

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
     << "\" data-rows=\"" << rows << "\" data-cols=\"" << cols << "\">\n";
  os << "<rect class=\"background\" x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(plot_w)
     << "\" height=\"" << num(plot_h) << "\" fill=\"" << detail::color_for(0.0) << "\"/>\n";
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      os << "<rect class=\"cell\" x=\"" << num(left + cell_w * static_cast<double>(c)) << "\" y=\""
         << num(top + cell_h * static_cast<double>(r)) << "\" width=\"" << num(cell_w) << "\" height=\"" << num(cell_h)
         << "\" fill=\"" << detail::color_for(h.values[r][c]) << "\"/>\n";

  os << "<g font-family=\"sans-serif\" font-size=\"10\">\n";
  const std::size_t row_step = std::max<std::size_t>(1, rows / 12);
  for (std::size_t r = 0; r < rows; r += row_step)
    os << "<text x=\"" << num(left - 4) << "\" y=\"" << num(top + cell_h * (static_cast<double>(r) + 0.5) + 3)
       << "\" text-anchor=\"end\">" << detail::xml_escape(h.row_labels[r]) << "</text>\n";
  const std::size_t col_step = std::max<std::size_t>(1, cols / 10);
  for (std::size_t c = 0; c < cols; c += col_step)
    os << "<text x=\"" << num(left + cell_w * (static_cast<double>(c) + 0.5)) << "\" y=\"" << num(top + plot_h + 14)
       << "\" text-anchor=\"middle\">" << detail::xml_escape(h.col_labels[c]) << "</text>\n";
  os << "<text class=\"x-label\" x=\"" << num(left + plot_w / 2) << "\" y=\"" << num(top + plot_h + 36)
     << "\" text-anchor=\"middle\">" << detail::xml_escape(h.x_label) << "</text>\n";
  os << "<text class=\"y-label\" transform=\"translate(16," << num(top + plot_h / 2)
     << ") rotate(-90)\" text-anchor=\"middle\">" << detail::xml_escape(h.y_label) << "</text>\n";

  // Color bar: 0 at the bottom, 1.2 at the top.
  const double bx = left + plot_w + bar_gap;
  const int steps = 64;
  for (int i = 0; i < steps; ++i) {
    const double v = kHeatmapMax * (i + 0.5) / steps;
    os << "<rect class=\"colorbar\" x=\"" << num(bx) << "\" y=\"" << num(top + plot_h * (1.0 - (i + 1.0) / steps))
       << "\" width=\"" << num(bar_w) << "\" height=\"" << num(plot_h / steps + 0.5) << "\" fill=\""
       << detail::color_for(v) << "\"/>\n";
  }
  for (double tick : {0.0, 1.0, kHeatmapMax}) {
    const double y = top + plot_h * (1.0 - tick / kHeatmapMax);
    const bool one = tick == 1.0;
    os << "<line x1=\"" << num(bx - (one ? 4 : 0)) << "\" y1=\"" << num(y) << "\" x2=\"" << num(bx + bar_w + 4)
       << "\" y2=\"" << num(y) << "\" stroke=\"" << (one ? "#d62728" : "#000000") << "\" stroke-width=\""
       << (one ? 2 : 1) << "\"/>\n";
    os << "<text x=\"" << num(bx + bar_w + 6) << "\" y=\"" << num(y + 3) << "\">" << detail::num(tick).substr(0, 3)
       << "</text>\n";
  }
  os << "</g>\n</svg>\n";
}

inline void render_heatmap(const HeatmapData& h, const std::filesystem::path& path) {
  std::ostringstream ss;
  render_heatmap(h, ss);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << ss.str();
}

// ---------------------------------------------------------------------------
// Subcommands

namespace detail {

inline void write_file(const RunConfig& cfg, const std::string& name, const std::function<void(std::ostream&)>& body,
                       bool with_header = true) {
  std::filesystem::create_directories(cfg.output_dir);
  const auto path = cfg.output_dir / name;
  std::ostringstream ss;
  if (with_header) write_header(ss, cfg);
  body(ss);
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << ss.str())) throw ConfigError("cannot write " + path.string());
}

// SVG files carry the header inside an XML comment.
inline void write_svg(const RunConfig& cfg, const std::string& name, const HeatmapData& h) {
  h.validate();
  write_file(
      cfg, name,
      [&](std::ostream& os) {
        std::ostringstream header;
        write_header(header, cfg);
        os << "<!--\n" << header.str() << "-->\n";
        render_heatmap(h, os);
      },
      false);
}

inline NetworkSpec network_spec(const RunConfig& cfg, int input_dim) {
  const auto arch = parse_architecture(cfg.get_string("arch"));
  NetworkSpec spec;
  switch (arch) {
    case Architecture::TwoLayerReLU: spec = NetworkSpec::two_layer_relu(input_dim, cfg.get_int("width")); break;
    case Architecture::TwoLayerPi: spec = NetworkSpec::two_layer_pi(input_dim, cfg.get_int("width")); break;
    case Architecture::MLP:
      spec = NetworkSpec::mlp(input_dim, cfg.get_int("width"), cfg.get_int("depth"), cfg.get_bool("skips"));
      break;
    case Architecture::PiNCP:
      spec = NetworkSpec::pi_ncp(input_dim, cfg.get_int("width"), cfg.get_int("depth"), cfg.get_int_list("mult_layers"));
      break;
  }
  if (arch == Architecture::PiNCP) {
    const auto& inj = cfg.get_string("injection");
    if (inj == "block")
      spec.injection = InjectionSource::BlockInput;
    else if (inj == "network")
      spec.injection = InjectionSource::NetworkInput;
    else
      throw ConfigError("injection must be 'block' or 'network', got '" + inj + "'");
    const auto& pl = cfg.get_string("placement");
    if (pl == "affine-branch")
      spec.placement = ActivationPlacement::AffineBranch;
    else if (pl == "after-product")
      spec.placement = ActivationPlacement::AfterProduct;
    else
      throw ConfigError("placement must be 'affine-branch' or 'after-product', got '" + pl + "'");
    spec.multiplicative_bias = cfg.get_real("mult_bias");
  }
  spec.validate();
  return spec;
}

inline experiments::SinusoidsConfig sinusoids_config(const RunConfig& cfg) {
  experiments::SinusoidsConfig sc;
  sc.network = network_spec(cfg, 1);
  sc.frequencies = cfg.get_int_list("frequencies");
  sc.amplitudes = cfg.get_real_list("amplitudes");
  sc.samples = cfg.get_int("samples");
  sc.centered_input = cfg.get_bool("centered");
  sc.learning_rate = cfg.get_real("lr");
  sc.lr_multiplicative = cfg.get_real_or_auto("lr_mult");
  sc.iterations = cfg.get_int("iterations");
  sc.record_every = cfg.get_int("record_every");
  sc.master_seed = cfg.master_seed;
  return sc;
}

template <typename Traces>
HeatmapData mean_heatmap(const std::vector<Traces>& per_run, const std::string& y_label, bool relative_to_initial,
                         bool smoothed) {
  HeatmapData h;
  h.y_label = y_label;
  const auto& first = per_run.front();
  for (const auto& ft : first) h.row_labels.push_back(std::to_string(ft.frequency));
  for (int it : first.front().checkpoints) h.col_labels.push_back(std::to_string(it));
  h.values.assign(first.size(), std::vector<double>(h.col_labels.size(), 0.0));
  std::vector<std::vector<int>> counts(first.size(), std::vector<int>(h.col_labels.size(), 0));
  for (const auto& traces : per_run)
    for (std::size_t r = 0; r < traces.size(); ++r) {
      const auto& vals = smoothed && !traces[r].smoothed.empty() ? traces[r].smoothed : traces[r].values;
      const double base = relative_to_initial && !vals.empty() && vals.front() > 0 ? vals.front() : 1.0;
      for (std::size_t c = 0; c < vals.size() && c < h.col_labels.size(); ++c) {
        h.values[r][c] += vals[c] / base;
        ++counts[r][c];
      }
    }
  for (std::size_t r = 0; r < h.values.size(); ++r)
    for (std::size_t c = 0; c < h.values[r].size(); ++c)
      h.values[r][c] = counts[r][c] ? h.values[r][c] / counts[r][c] : std::nan("");
  return h;
}

}  // namespace detail

inline int cmd_kernel_eval(const RunConfig& cfg, std::ostream& out) {
  const auto k = kernels::DotProductKernel::from_name(cfg.get_string("kernel"));
  out << csv::format_real(k(cfg.get_real("t"))) << "\n";
  return 0;
}

inline int cmd_empirical_ntk(const RunConfig& cfg, std::ostream& out) {
  const int d = cfg.get_int("d");
  const double t = cfg.get_real("t");
  if (d < 1) throw ConfigError("d must be >= 1");
  if (!(std::abs(t) <= 1.0)) throw DomainError("t must lie in [-1, 1]");
  const auto arch = parse_architecture(cfg.get_string("arch"));
  if (arch != Architecture::TwoLayerPi && arch != Architecture::TwoLayerReLU)
    throw UnsupportedArchitecture("empirical-ntk: only two-layer-relu and two-layer-pi are supported");
  const NetworkSpec spec = arch == Architecture::TwoLayerPi ? NetworkSpec::two_layer_pi(d + 1, cfg.get_int("width"))
                                                            : NetworkSpec::two_layer_relu(d + 1, cfg.get_int("width"));
  std::vector<double> a(static_cast<std::size_t>(d + 1), 0.0), b(a);
  a[0] = 1.0;
  b[0] = t;
  b[1] = std::sqrt(std::max(0.0, 1.0 - t * t));
  const auto est = kernels::empirical_ntk(spec, spec.width, kernels::UnitVector(a), kernels::UnitVector::normalize(b),
                                          cfg.master_seed, cfg.get_int("draws"));
  const double analytic = arch == Architecture::TwoLayerPi ? kernels::ntk_pi(t) : kernels::ntk_standard(t);
  out << "mean=" << csv::format_real(est.mean) << " std_error=" << csv::format_real(est.std_error)
      << " analytic=" << csv::format_real(analytic) << " draws=" << est.draws.size() << "\n";
  return 0;
}

inline int cmd_spectrum(const RunConfig& cfg, std::ostream& out) {
  const auto kernel = kernels::DotProductKernel::from_name(cfg.get_string("kernel"));
  const int d = cfg.get_int("d");
  const int kmax = cfg.get_int("kmax");
  const int nodes = cfg.get_int("nodes");
  if (nodes < 0) throw ConfigError("nodes must be >= 0");
  const auto q = nodes == 0 ? spectral::QuadratureSpec::for_degree(kmax)
                            : spectral::QuadratureSpec{static_cast<std::size_t>(nodes)};
  const auto s = spectral::compute_spectrum(kernel, d, kmax, q);
  detail::write_file(cfg, "spectrum.csv", [&](std::ostream& os) {
    os << "# d = " << d << "\n";
    spectral::write_spectrum_csv(os, s);
  });
  out << (cfg.output_dir / "spectrum.csv").string() << "\n";
  return 0;
}

inline int cmd_decay_fit(const RunConfig& cfg, std::ostream& out) {
  const std::string text = read_file(cfg.get_string("input"));
  std::istringstream is(text);
  const auto s = spectral::read_spectrum_csv(is);
  const auto fit = spectral::decay_slope_fit(s, cfg.get_int("kmin"), cfg.get_int("kmax"),
                                             spectral::parse_class_filter(cfg.get_string("class")));
  out << "slope=" << csv::format_real(fit.slope) << " intercept=" << csv::format_real(fit.intercept)
      << " r2=" << csv::format_real(fit.r_squared) << " points=" << fit.points
      << " reliable=" << (fit.reliable() ? "true" : "false") << "\n";
  return 0;
}

inline int cmd_harmonics(const RunConfig& cfg, std::ostream& out) {
  experiments::HarmonicsConfig hc;
  hc.architecture = parse_architecture(cfg.get_string("arch"));
  hc.width = cfg.get_int("width");
  hc.n = cfg.get_int("n");
  hc.d = cfg.get_int("d");
  hc.degrees = cfg.get_int_list("degrees");
  hc.amplitudes = cfg.get_real_list("amplitudes");
  const auto& norm = cfg.get_string("normalizer");
  if (norm == "degree-count")
    hc.normalizer = experiments::HarmonicNormalizer::DegreeCount;
  else if (norm == "unit-variance")
    hc.normalizer = experiments::HarmonicNormalizer::UnitVariance;
  else
    throw ConfigError("normalizer must be 'degree-count' or 'unit-variance', got '" + norm + "'");
  hc.learning_rate = cfg.get_real_or_auto("lr");
  hc.lr_multiplicative = cfg.get_real_or_auto("lr_mult");
  hc.iterations = cfg.get_int("iterations");
  hc.record_every = cfg.get_int("record_every");
  hc.seeds = cfg.get_int("seeds");
  hc.first_run = cfg.get_int("first_run");
  hc.smoothing = cfg.get_int("smoothing");
  hc.threshold = cfg.get_real("threshold");
  hc.master_seed = cfg.master_seed;
  const auto runs = experiments::run_harmonics(hc);
  const std::string arch = to_string(hc.architecture);

  auto init_seed = [&](int run) { return stream_for(cfg.master_seed, static_cast<std::uint64_t>(run), "init").key(); };
  detail::write_file(cfg, "trace.csv", [&](std::ostream& os) {
    experiments::write_trace_header(os);
    for (const auto& r : runs)
      for (const auto& ft : r.degrees) {
        const std::string id = arch + "-" + std::to_string(r.run);
        experiments::write_trace_rows(os, id, init_seed(r.run), "residual_projection", ft);
        experiments::write_trace_rows(os, id, init_seed(r.run), "residual_projection_smoothed", ft, true);
      }
  });
  detail::write_file(cfg, "summary.csv", [&](std::ostream& os) {
    os << "run_id,seed,architecture,learning_rate,degree,initial_projection,final_projection,time_to_threshold,"
          "final_loss\n";
    for (const auto& r : runs)
      for (const auto& ft : r.degrees)
        os << arch << '-' << r.run << ',' << init_seed(r.run) << ',' << arch << ','
           << csv::format_real(r.learning_rate) << ',' << ft.frequency << ',' << csv::format_real(ft.values.front())
           << ',' << csv::format_real(ft.values.back()) << ',' << experiments::optional_int(ft.time_to_threshold)
           << ',' << csv::format_real(r.final_loss) << '\n';
  });
  if (cfg.get_bool("heatmap")) {
    std::vector<std::vector<experiments::FrequencyTrace>> per_run;
    for (const auto& r : runs) per_run.push_back(r.degrees);
    detail::write_svg(cfg, "heatmap.svg", detail::mean_heatmap(per_run, "degree", true, true));
  }
  for (const auto& r : runs)
    for (const auto& ft : r.degrees)
      out << "run=" << r.run << " degree=" << ft.frequency
          << " time_to_threshold=" << experiments::optional_int(ft.time_to_threshold) << "\n";
  return 0;
}

inline int cmd_sinusoids(const RunConfig& cfg, std::ostream& out) {
  auto sc = detail::sinusoids_config(cfg);
  sc.seeds = cfg.get_int("seeds");
  sc.first_run = cfg.get_int("first_run");
  sc.threshold = cfg.get_real("threshold");
  const bool save = cfg.get_bool("save_checkpoints");
  const auto runs = experiments::run_sinusoids(sc, save);
  const std::string arch = to_string(sc.network.kind);
  auto init_seed = [&](int run) { return stream_for(cfg.master_seed, static_cast<std::uint64_t>(run), "init").key(); };

  detail::write_file(cfg, "trace.csv", [&](std::ostream& os) {
    experiments::write_trace_header(os);
    for (const auto& r : runs)
      for (const auto& ft : r.frequencies)
        experiments::write_trace_rows(os, arch + "-" + std::to_string(r.run), init_seed(r.run), "amplitude_ratio", ft);
  });
  detail::write_file(cfg, "summary.csv", [&](std::ostream& os) {
    os << "run_id,seed,architecture,frequency,time_to_threshold,final_ratio,final_loss,diverged_at\n";
    for (const auto& r : runs)
      for (const auto& ft : r.frequencies)
        os << arch << '-' << r.run << ',' << init_seed(r.run) << ',' << arch << ',' << ft.frequency << ','
           << experiments::optional_int(ft.time_to_threshold) << ','
           << (ft.values.empty() ? std::string("NA") : csv::format_real(ft.values.back())) << ','
           << csv::format_real(r.final_loss) << ',' << experiments::optional_int(r.diverged_at) << '\n';
  });
  if (cfg.get_bool("heatmap")) {
    std::vector<std::vector<experiments::FrequencyTrace>> per_run;
    for (const auto& r : runs)
      if (!r.diverged_at) per_run.push_back(r.frequencies);
    if (!per_run.empty()) detail::write_svg(cfg, "heatmap.svg", detail::mean_heatmap(per_run, "frequency", false, false));
  }
  if (save)
    for (const auto& r : runs)
      if (r.trained) {
        std::filesystem::create_directories(cfg.output_dir);
        std::ofstream os(cfg.output_dir / ("run_" + std::to_string(r.run) + ".ckpt"), std::ios::binary);
        networks::save_checkpoint(*r.trained, os);
      }
  for (const auto& r : runs) {
    out << "run=" << r.run;
    if (r.diverged_at) out << " diverged_at=" << *r.diverged_at;
    for (const auto& ft : r.frequencies) out << " k" << ft.frequency << "=" << experiments::optional_int(ft.time_to_threshold);
    out << "\n";
  }
  return 0;
}

inline int cmd_robustness(const RunConfig& cfg, std::ostream& out) {
  auto sc = detail::sinusoids_config(cfg);
  const int run = cfg.get_int("run");
  sc.first_run = run;
  sc.seeds = 1;
  const auto target = experiments::make_sinusoid_target(sc.frequencies, sc.amplitudes, sc.samples,
                                                        stream_for(cfg.master_seed, static_cast<std::uint64_t>(run), "target"));
  networks::Network net;
  const auto& ckpt = cfg.get_string("checkpoint");
  if (ckpt.empty()) {
    auto runs = experiments::run_sinusoids(sc, true);
    if (!runs.front().trained)
      throw DivergenceError(static_cast<std::size_t>(*runs.front().diverged_at), "robustness: training diverged");
    net = std::move(*runs.front().trained);
  } else {
    net = networks::build(sc.network, 0);
    std::ifstream is(ckpt, std::ios::binary);
    if (!is) throw ConfigError("cannot read checkpoint: " + ckpt);
    networks::load_checkpoint(net, is);
  }

  experiments::RobustnessConfig rc;
  rc.deltas = cfg.get_real_list("deltas");
  rc.perturbations = cfg.get_int("perturbations");
  rc.master_seed = cfg.master_seed;
  rc.run = run;
  rc.convergence_threshold = cfg.get_real("convergence");
  rc.centered_input = sc.centered_input;
  const auto table = experiments::run_robustness(net, target, rc);
  const std::string arch = to_string(sc.network.kind);
  detail::write_file(cfg, "retention.csv", [&](std::ostream& os) {
    os << "run_id,delta,draw,frequency,ratio,converged_ratio\n";
    for (const auto& cell : table.cells)
      for (std::size_t i = 0; i < table.frequencies.size(); ++i)
        os << arch << '-' << run << ',' << csv::format_real(cell.delta) << ',' << cell.draw << ','
           << table.frequencies[i] << ',' << csv::format_real(cell.ratios[i]) << ','
           << csv::format_real(table.converged[i]) << '\n';
  });
  out << (cfg.output_dir / "retention.csv").string() << "\n";
  return 0;
}

inline int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  const NetworkSpec spec = detail::network_spec(cfg, cfg.get_int("input_dim"));
  auto net = networks::build(spec, stream_for(cfg.master_seed, 0, "init").key());
  CounterRng rng = stream_for(cfg.master_seed, 0, "data");
  const auto n = static_cast<std::size_t>(cfg.get_int("batch"));
  if (n < 1) throw ConfigError("batch must be >= 1");
  autodiff::Tensor x({n, static_cast<std::size_t>(spec.input_dim)}), y({n, 1});
  for (double& v : x.data()) v = rng.normal() / std::sqrt(static_cast<double>(spec.input_dim));
  for (double& v : y.data()) v = rng.normal();
  const auto rep = autodiff::gradcheck(net.graph, {{"x", x}, {"y", y}}, net.loss, cfg.get_real("tol"));
  out << "passed=" << (rep.passed ? "true" : "false") << " max_rel_error=" << csv::format_real(rep.max_rel_error)
      << " worst_param=" << rep.worst_param << " worst_index=" << rep.worst_index << " checked=" << rep.checked << "\n";
  if (!rep.passed) throw PreconditionError("gradcheck: max relative error " + csv::format_real(rep.max_rel_error) +
                                           " exceeds tolerance");
  return 0;
}

inline int dispatch(const RunConfig& cfg, std::ostream& out) {
  static const std::map<std::string, std::function<int(const RunConfig&, std::ostream&)>> table{
      {"kernel-eval", cmd_kernel_eval}, {"empirical-ntk", cmd_empirical_ntk}, {"spectrum", cmd_spectrum},
      {"decay-fit", cmd_decay_fit},     {"harmonics", cmd_harmonics},         {"sinusoids", cmd_sinusoids},
      {"robustness", cmd_robustness},   {"gradcheck", cmd_gradcheck}};
  const auto it = table.find(cfg.command);
  if (it == table.end()) throw ConfigError("unknown command: " + cfg.command);
  return it->second(cfg, out);
}

// One machine-parsable line: error command=<c> type=<t> message="<m>".
inline std::string error_line(const std::string& command, const std::string& type, std::string message) {
  for (char& c : message)
    if (c == '\n' || c == '\r') c = ' ';
  std::string escaped;
  for (char c : message) {
    if (c == '"' || c == '\\') escaped += '\\';
    escaped += c;
  }
  return "error command=" + (command.empty() ? std::string("-") : command) + " type=" + type + " message=\"" + escaped +
         "\"";
}

}  // namespace pinet::cli

#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "cstnet/error.hpp"
#include "cstnet/network.hpp"

namespace cstnet {

/// Everything that determines a training run.
struct TrainConfig {
  Variant variant = Variant::baseline;
  std::uint64_t seed = 1;
  std::size_t epochs = 15;
  std::size_t batch_size = 128;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t n_train = 5000;
  std::size_t n_test = 1000;
  bool subtract_mean = false;   // per-channel train-split mean, off so the color layer sees raw color
  bool color_offset = false;    // affine y = Wx + b for cst-global
  std::string fixed_transform;  // 9-real matrix file for cst-fixed
  std::string data_dir = "data/cifar-10-batches-bin";
  std::string out_dir = "out";  // where a run writes; not part of the recorded config
  bool record_wall_time = false;  // off: the seconds column is 0 and metrics.csv is reproducible
  double divergence_limit = 50.0;

  void validate() const {
    if (epochs < 1) throw InputError("epochs must be >= 1");
    if (batch_size < 1) throw InputError("batch_size must be >= 1");
    // lr = 0 is accepted: it turns a run into a frozen-weight evaluation.
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw InputError("lr must be a finite value >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must be in [0, 1)");
    if (n_train < 1) throw InputError("n_train must be >= 1");
    if (variant == Variant::cst_fixed && fixed_transform.empty()) {
      throw InputError("cst-fixed needs fixed_transform = <matrix file>");
    }
    if (color_offset && variant != Variant::cst_global) throw InputError("color_offset requires cst-global");
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class Int>
Int parse_int(std::string_view key, std::string_view text) {
  Int value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw InputError("config key '" + std::string(key) + "': expected an integer, got '" + std::string(text) + "'");
  }
  return value;
}

inline double parse_real(std::string_view key, std::string_view text) {
  std::istringstream in{std::string(text)};
  double value = 0.0;
  std::string rest;
  if (!(in >> value) || (in >> rest)) {
    throw InputError("config key '" + std::string(key) + "': expected a number, got '" + std::string(text) + "'");
  }
  return value;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw InputError("config key '" + std::string(key) + "': expected a boolean, got '" + std::string(text) + "'");
}

}  // namespace detail

/// Sets one field by its config-file key. Unknown keys are errors.
inline void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  using namespace detail;
  if (key == "variant") cfg.variant = parse_variant(value);
  else if (key == "seed") cfg.seed = parse_int<std::uint64_t>(key, value);
  else if (key == "epochs") cfg.epochs = parse_int<std::size_t>(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_int<std::size_t>(key, value);
  else if (key == "lr") cfg.lr = parse_real(key, value);
  else if (key == "momentum") cfg.momentum = parse_real(key, value);
  else if (key == "n_train") cfg.n_train = parse_int<std::size_t>(key, value);
  else if (key == "n_test") cfg.n_test = parse_int<std::size_t>(key, value);
  else if (key == "subtract_mean") cfg.subtract_mean = parse_bool(key, value);
  else if (key == "color_offset") cfg.color_offset = parse_bool(key, value);
  else if (key == "fixed_transform") cfg.fixed_transform = std::string(value);
  else if (key == "data_dir") cfg.data_dir = std::string(value);
  else if (key == "out_dir") cfg.out_dir = std::string(value);
  else if (key == "record_wall_time") cfg.record_wall_time = parse_bool(key, value);
  else if (key == "divergence_limit") cfg.divergence_limit = parse_real(key, value);
  else throw InputError("unknown config key '" + std::string(key) + "'");
}

/// Flat `key = value` lines; `#` starts a comment.
inline void apply_config_text(TrainConfig& cfg, std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw InputError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw InputError("config line " + std::to_string(line_no) + ": empty key");
    set_config_value(cfg, key, value);
  }
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(base, buf.str());
  return base;
}

/// Inverse of apply_config_text, used for checkpoint headers and run records.
/// out_dir is left out so identical runs written to different places match byte for byte.
inline std::string format_config(const TrainConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "variant = " << to_string(cfg.variant) << '\n'
      << "seed = " << cfg.seed << '\n'
      << "epochs = " << cfg.epochs << '\n'
      << "batch_size = " << cfg.batch_size << '\n'
      << "lr = " << cfg.lr << '\n'
      << "momentum = " << cfg.momentum << '\n'
      << "n_train = " << cfg.n_train << '\n'
      << "n_test = " << cfg.n_test << '\n'
      << "subtract_mean = " << (cfg.subtract_mean ? "true" : "false") << '\n'
      << "color_offset = " << (cfg.color_offset ? "true" : "false") << '\n'
      << "fixed_transform = " << cfg.fixed_transform << '\n'
      << "data_dir = " << cfg.data_dir << '\n'
      << "record_wall_time = " << (cfg.record_wall_time ? "true" : "false") << '\n'
      << "divergence_limit = " << cfg.divergence_limit << '\n';
  return out.str();
}

}  // namespace cstnet

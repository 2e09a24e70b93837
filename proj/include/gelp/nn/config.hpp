#pragma once

#include <cstddef>
#include <map>
#include <sstream>
#include <string>

#include "gelp/ad/ops.hpp"

namespace gelp::nn {

/// Shape of one dilated gated-convolution stack.
struct NetConfig {
  std::size_t residual_channels = 64;
  std::size_t skip_channels = 64;
  std::size_t filter_width = 5;
  std::size_t dilated_stacks = 3;
  std::size_t dilation_cycle = 8;
  bool use_residual = true;
  ad::Padding padding = ad::Padding::same;
  std::size_t input_channels = 1;
  std::size_t output_channels = 1;
  /// 0 = no conditioning path.
  std::size_t conditioning_channels = 0;
  /// Standardize inputs with stored per-channel mean/std buffers.
  bool normalize_input = false;

  std::size_t num_layers() const { return dilated_stacks * dilation_cycle; }
  std::size_t dilation(std::size_t layer) const { return std::size_t{1} << (layer % dilation_cycle); }

  void validate() const {
    require(residual_channels > 0 && skip_channels > 0, "channel counts must be positive");
    require(filter_width % 2 == 1, "filter width must be odd");
    require(dilated_stacks > 0 && dilation_cycle > 0 && dilation_cycle < 20, "invalid dilation layout");
    require(input_channels > 0 && output_channels > 0, "input/output channel counts must be positive");
  }

  bool operator==(const NetConfig&) const = default;
};

inline constexpr std::size_t kMelChannels = 80;
inline constexpr std::size_t kContextChannels = 64;

inline NetConfig generator_config() {
  return {64, 64, 5, 3, 8, true, ad::Padding::same, 1, 1, kContextChannels};
}
inline NetConfig discriminator_config() {
  return {64, 64, 5, 3, 7, false, ad::Padding::valid, 1, 1, kContextChannels};
}
inline NetConfig conditioner_config() {
  return {64, 64, 5, 2, 4, true, ad::Padding::same, kMelChannels, kContextChannels, 0, true};
}

/// Small variants used for tests and desk-scale training: 16 channels, one
/// stack of four dilations.
inline NetConfig toy(NetConfig cfg, std::size_t context_channels = 16) {
  cfg.residual_channels = cfg.skip_channels = 16;
  cfg.dilated_stacks = 1;
  cfg.dilation_cycle = 4;
  if (cfg.conditioning_channels > 0) cfg.conditioning_channels = context_channels;
  if (cfg.input_channels == kMelChannels) cfg.output_channels = context_channels;
  return cfg;
}

/// Number of input steps that influence one output step:
/// 1 + stacks * (width - 1) * (2^cycle - 1).
inline std::size_t receptive_field(const NetConfig& cfg) {
  return 1 + cfg.dilated_stacks * (cfg.filter_width - 1) * ((std::size_t{1} << cfg.dilation_cycle) - 1);
}

/// key=value lines, each key prefixed with `prefix`.
inline std::string to_text(const NetConfig& cfg, const std::string& prefix = "") {
  std::ostringstream s;
  s << prefix << "residual_channels=" << cfg.residual_channels << "\n"
    << prefix << "skip_channels=" << cfg.skip_channels << "\n"
    << prefix << "filter_width=" << cfg.filter_width << "\n"
    << prefix << "dilated_stacks=" << cfg.dilated_stacks << "\n"
    << prefix << "dilation_cycle=" << cfg.dilation_cycle << "\n"
    << prefix << "use_residual=" << (cfg.use_residual ? 1 : 0) << "\n"
    << prefix << "padding=" << (cfg.padding == ad::Padding::same ? "same" : "valid") << "\n"
    << prefix << "input_channels=" << cfg.input_channels << "\n"
    << prefix << "output_channels=" << cfg.output_channels << "\n"
    << prefix << "conditioning_channels=" << cfg.conditioning_channels << "\n"
    << prefix << "normalize_input=" << (cfg.normalize_input ? 1 : 0) << "\n";
  return s.str();
}

/// Parses "key=value" lines; blank lines and '#' comments are ignored.
inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("line " + std::to_string(number) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::size_t parse_count(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(value, &used);
    if (used == value.size()) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw FormatError(key + ": expected a non-negative integer, got \"" + value + "\"");
}

inline NetConfig net_config_from_text(const std::string& text, const std::string& prefix = "") {
  const auto kv = parse_key_values(text);
  auto get = [&](const std::string& key) {
    auto it = kv.find(prefix + key);
    if (it == kv.end()) throw FormatError("network config is missing " + prefix + key);
    return it->second;
  };
  NetConfig cfg;
  cfg.residual_channels = parse_count("residual_channels", get("residual_channels"));
  cfg.skip_channels = parse_count("skip_channels", get("skip_channels"));
  cfg.filter_width = parse_count("filter_width", get("filter_width"));
  cfg.dilated_stacks = parse_count("dilated_stacks", get("dilated_stacks"));
  cfg.dilation_cycle = parse_count("dilation_cycle", get("dilation_cycle"));
  cfg.use_residual = parse_count("use_residual", get("use_residual")) != 0;
  const auto pad = get("padding");
  if (pad != "same" && pad != "valid") throw FormatError("padding must be same or valid, got " + pad);
  cfg.padding = pad == "same" ? ad::Padding::same : ad::Padding::valid;
  cfg.input_channels = parse_count("input_channels", get("input_channels"));
  cfg.output_channels = parse_count("output_channels", get("output_channels"));
  cfg.conditioning_channels = parse_count("conditioning_channels", get("conditioning_channels"));
  cfg.normalize_input = parse_count("normalize_input", get("normalize_input")) != 0;
  cfg.validate();
  return cfg;
}

}  // namespace gelp::nn

#pragma once

#include <charconv>
#include <sstream>

#include "gelp/loss/losses.hpp"
#include "gelp/vocoder/model.hpp"

namespace gelp::train {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class Phase { excitation, speech };

inline const char* to_string(Phase p) { return p == Phase::excitation ? "excitation" : "speech"; }

struct TrainConfig {
  double segment_seconds = 1.0;
  std::size_t pretrain_iters = 500;
  std::size_t total_iters = 2000;
  std::size_t crops_per_iter = 32;
  AdamConfig adam;
  loss::LossWeights weights;
  std::uint64_t seed = 1;
  vocoder::ModelSize model = vocoder::ModelSize::toy;
  /// Write a checkpoint every N iterations (0: only at the end).
  std::size_t checkpoint_every = 0;

  std::size_t segment_samples() const {
    return static_cast<std::size_t>(std::llround(segment_seconds * dsp::kDefaultSampleRate));
  }

  Phase phase(std::size_t iteration) const {
    return iteration < pretrain_iters ? Phase::excitation : Phase::speech;
  }

  void validate() const {
    require(segment_seconds > 0, "segment_seconds must be positive");
    require(segment_samples() % 80 == 0, "segments must be a whole number of 80-sample hops");
    require(pretrain_iters <= total_iters, "pretrain_iters must not exceed total_iters");
    require(crops_per_iter >= 1, "crops_per_iter must be at least 1");
    require(adam.lr > 0 && adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0,
            "invalid Adam settings");
    weights.validate();
    const auto rf = nn::receptive_field(vocoder::model_configs(model).d);
    require(segment_samples() >= rf, "segments (" + std::to_string(segment_samples()) +
                                         " samples) are shorter than the discriminator receptive field (" +
                                         std::to_string(rf) + ")");
  }
};

inline std::string format_real(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

inline std::string to_text(const TrainConfig& c) {
  std::ostringstream s;
  s << "segment_seconds=" << format_real(c.segment_seconds) << "\n"
    << "pretrain_iters=" << c.pretrain_iters << "\n"
    << "total_iters=" << c.total_iters << "\n"
    << "crops_per_iter=" << c.crops_per_iter << "\n"
    << "lr=" << format_real(c.adam.lr) << "\n"
    << "beta1=" << format_real(c.adam.beta1) << "\n"
    << "beta2=" << format_real(c.adam.beta2) << "\n"
    << "adam_eps=" << format_real(c.adam.eps) << "\n"
    << "lambda_stft=" << format_real(c.weights.lambda1) << "\n"
    << "lambda_gp=" << format_real(c.weights.lambda2) << "\n"
    << "lambda_r1=" << format_real(c.weights.lambda3) << "\n"
    << "seed=" << c.seed << "\n"
    << "model=" << vocoder::to_string(c.model) << "\n"
    << "checkpoint_every=" << c.checkpoint_every << "\n";
  return s.str();
}

inline double parse_real(const std::string& key, const std::string& value) {
  double v = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw FormatError(key + ": expected a number, got \"" + value + "\"");
  return v;
}

/// Sets one key; unknown keys are rejected.
inline void set_option(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "segment_seconds") c.segment_seconds = parse_real(key, value);
  else if (key == "pretrain_iters") c.pretrain_iters = nn::parse_count(key, value);
  else if (key == "total_iters") c.total_iters = nn::parse_count(key, value);
  else if (key == "crops_per_iter") c.crops_per_iter = nn::parse_count(key, value);
  else if (key == "lr") c.adam.lr = parse_real(key, value);
  else if (key == "beta1") c.adam.beta1 = parse_real(key, value);
  else if (key == "beta2") c.adam.beta2 = parse_real(key, value);
  else if (key == "adam_eps") c.adam.eps = parse_real(key, value);
  else if (key == "lambda_stft") c.weights.lambda1 = parse_real(key, value);
  else if (key == "lambda_gp") c.weights.lambda2 = parse_real(key, value);
  else if (key == "lambda_r1") c.weights.lambda3 = parse_real(key, value);
  else if (key == "seed") c.seed = nn::parse_count(key, value);
  else if (key == "model") {
    try {
      c.model = vocoder::parse_model_size(value);
    } catch (const InvalidArgument& e) {
      throw FormatError(e.what());
    }
  } else if (key == "checkpoint_every") c.checkpoint_every = nn::parse_count(key, value);
  else throw FormatError("unknown training option \"" + key + "\"");
}

/// "key=value" override, as given on a command line.
inline void apply_override(TrainConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw FormatError("expected key=value, got \"" + assignment + "\"");
  set_option(c, assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline TrainConfig train_config_from_text(const std::string& text, TrainConfig base = {}) {
  for (const auto& [k, v] : nn::parse_key_values(text)) set_option(base, k, v);
  base.validate();
  return base;
}

}  // namespace gelp::train

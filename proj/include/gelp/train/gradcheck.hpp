#pragma once

#include <functional>
#include <numeric>

#include "gelp/train/trainer.hpp"

namespace gelp::train {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::size_t segment_samples = 320;
  std::size_t crops = 2;
  std::uint64_t seed = 1;
  std::vector<Phase> phases{Phase::excitation, Phase::speech};
  // 0 checks every coordinate; otherwise an evenly spaced subset per tensor.
  std::size_t max_per_tensor = 0;
};

struct LossCheck {
  Phase phase = Phase::speech;
  std::string loss;
  std::size_t coordinates = 0;
  double max_rel_error = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  // Parameters with at least one coordinate at or above the tolerance.
  std::vector<std::string> failing;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

struct GradCheckResult {
  std::vector<LossCheck> checks;
  std::size_t parameters = 0;
  double seconds = 0;

  bool passed(double tolerance) const {
    return std::all_of(checks.begin(), checks.end(), [&](const LossCheck& c) { return c.passed(tolerance); });
  }
};

inline const std::array<const char*, 4> kLossNames{"stft", "gan", "gp", "r1"};

namespace detail {

inline std::array<double, 4> values(const LossTerms<double>& t, double stft) {
  return {stft, t.gan.item(), t.gp.item(), t.r1.item()};
}

inline std::vector<std::size_t> coordinates(std::size_t n, std::size_t max) {
  std::vector<std::size_t> idx;
  if (max == 0 || max >= n) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0);
  } else {
    for (std::size_t k = 0; k < max; ++k) idx.push_back(k * n / max);
  }
  return idx;
}

}  // namespace detail

/// Central-difference check of the four losses against every trainable
/// parameter of G, C and D on a freshly initialised toy model, in 64-bit.
/// When a D weight is perturbed only the critic terms are recomputed.
inline GradCheckResult gradient_check(const TrainConfig& base, const GradCheckOptions& opt,
                                      const std::function<void(const std::string&)>& progress = {}) {
  require(opt.step > 0 && opt.tolerance > 0, "gradient check step and tolerance must be positive");
  const auto start = std::chrono::steady_clock::now();
  TrainConfig cfg = base;
  cfg.segment_seconds = static_cast<double>(opt.segment_samples) / dsp::kDefaultSampleRate;
  cfg.crops_per_iter = opt.crops;
  cfg.seed = opt.seed;
  cfg.validate();

  const auto corpus = synthetic_corpus<double>(1, 2.0 * cfg.segment_seconds + 0.05, opt.seed);
  Trainer<double> trainer(cfg, corpus);
  auto s = trainer.initial_state();
  const auto seg = prepare_segment<double>(trainer.next_segment(s), trainer.filterbank());
  const auto draws = draw_iteration<double>(seg.length(), opt.crops, nn::receptive_field(s.d_cfg), s.rng);

  const auto gc = s.gc_params();
  const auto dp = s.d_params();
  GradCheckResult result;
  for (const auto& p : gc) result.parameters += p.tensor.size();
  for (const auto& p : dp) result.parameters += p.tensor.size();

  for (const Phase phase : opt.phases) {
    if (progress) progress(std::string("phase ") + to_string(phase));
    const auto target = waveform_tensor<double>(seg.target(phase));
    std::array<LossCheck, 4> checks;
    for (std::size_t o = 0; o < 4; ++o) {
      checks[o].phase = phase;
      checks[o].loss = kLossNames[o];
    }

    const auto terms = full_losses(s.model, s.d_cfg, s.d, seg, draws, phase);
    std::vector<Tensor<double>> leaves;
    for (const auto& p : gc) leaves.push_back(p.tensor);
    for (const auto& p : dp) leaves.push_back(p.tensor);
    const std::array<Tensor<double>, 4> outs{terms.stft, terms.gan, terms.gp, terms.r1};
    std::array<std::vector<std::optional<Tensor<double>>>, 4> analytic;
    for (std::size_t o = 0; o < 4; ++o) analytic[o] = ad::grad(outs[o], leaves);

    const auto pass = run_generator(s.model, seg, draws.noise, phase);
    const auto fake = pass.output.detach(), context = pass.context.detach();
    const double stft = terms.stft.item();

    auto full = [&] {
      const auto t = full_losses(s.model, s.d_cfg, s.d, seg, draws, phase);
      return detail::values(t, t.stft.item());
    };
    auto critic_only = [&] { return detail::values(critic_terms(s.d_cfg, s.d, target, fake, context, draws), stft); };

    auto check = [&](const Param<double>& p, std::size_t slot, const std::function<std::array<double, 4>()>& eval) {
      auto tensor = p.tensor;
      auto values = tensor.mutable_data();
      for (const std::size_t i : detail::coordinates(values.size(), opt.max_per_tensor)) {
        const double saved = values[i];
        values[i] = saved + opt.step;
        const auto plus = eval();
        values[i] = saved - opt.step;
        const auto minus = eval();
        values[i] = saved;
        for (std::size_t o = 0; o < 4; ++o) {
          const double numeric = (plus[o] - minus[o]) / (2 * opt.step);
          const double a = analytic[o][slot] ? (*analytic[o][slot])[i] : 0.0;
          const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
          auto& c = checks[o];
          if (rel >= opt.tolerance && (c.failing.empty() || c.failing.back() != p.name)) c.failing.push_back(p.name);
          if (c.coordinates++ == 0 || rel > c.max_rel_error) {
            c.max_rel_error = rel;
            c.worst_parameter = p.name;
            c.worst_index = i;
            c.analytic = a;
            c.numeric = numeric;
          }
        }
      }
      if (progress) progress(p.name);
    };
    for (std::size_t k = 0; k < gc.size(); ++k) check(gc[k], k, full);
    for (std::size_t k = 0; k < dp.size(); ++k) check(dp[k], gc.size() + k, critic_only);
    result.checks.insert(result.checks.end(), checks.begin(), checks.end());
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace gelp::train

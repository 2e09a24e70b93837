#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <random>

#include "gelp/dsp/stft.hpp"

namespace gelp::dsp {

template <class T>
struct GriffinLimResult {
  std::vector<T> signal;
  /// ||(|STFT(x_i)| - mag)|| / ||mag||; entry 0 is the initial estimate,
  /// entry i the estimate after i projections.
  std::vector<double> convergence;
};

/// Griffin-Lim phase recovery. The iteration runs on the padded signal, where
/// the normalized overlap-add is the exact least-squares inverse of the frame
/// analysis, so the convergence error never increases. The returned signal is
/// cropped to (K - 1) * hop samples.
template <class T>
GriffinLimResult<T> griffin_lim(const RealFrames<T>& mag, const StftConfig& cfg, std::size_t iterations,
                                std::uint64_t seed,
                                const std::optional<ComplexFrames<T>>& initial_phase = std::nullopt) {
  cfg.validate();
  require(iterations >= 1, "Griffin-Lim needs at least one iteration");
  require(static_cast<std::size_t>(mag.cols()) == cfg.bins(), "magnitude bin count mismatch");
  require(mag.rows() >= 2, "Griffin-Lim needs at least two frames");
  require(mag.allFinite() && (mag.array() >= T(0)).all(), "magnitudes must be finite and non-negative");
  const auto frames = static_cast<std::size_t>(mag.rows());

  ComplexFrames<T> phase(mag.rows(), mag.cols());
  if (initial_phase) {
    require(initial_phase->rows() == mag.rows() && initial_phase->cols() == mag.cols(),
            "initial phase shape mismatch");
    phase = *initial_phase;
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    for (Eigen::Index i = 0; i < phase.size(); ++i)
      phase.data()[i] = std::polar(T(1), static_cast<T>(angle(rng)));
  }

  const double mag_norm = std::max(static_cast<double>(mag.norm()), 1e-30);
  GriffinLimResult<T> result;
  ComplexFrames<T> target = mag.template cast<std::complex<T>>().cwiseProduct(phase);
  std::vector<T> padded = synthesize_padded(target, cfg);
  for (std::size_t it = 0;; ++it) {
    const ComplexFrames<T> est = analyze_padded<T>(padded, cfg, frames);
    result.convergence.push_back(static_cast<double>((est.cwiseAbs() - mag).norm()) / mag_norm);
    if (it == iterations) break;
    for (Eigen::Index i = 0; i < est.size(); ++i) {
      const auto v = est.data()[i];
      const T a = std::abs(v);
      target.data()[i] = a > T(0) ? mag.data()[i] * (v / a) : std::complex<T>(mag.data()[i], 0);
    }
    padded = synthesize_padded(target, cfg);
  }
  const std::size_t length = (frames - 1) * cfg.hop_length;
  result.signal.assign(padded.begin() + static_cast<std::ptrdiff_t>(cfg.pad_left()),
                       padded.begin() + static_cast<std::ptrdiff_t>(cfg.pad_left() + length));
  return result;
}

}  // namespace gelp::dsp

#pragma once

#include <complex>
#include <string>

#include "gelp/core/log.hpp"
#include "gelp/dsp/mel.hpp"
#include "gelp/lpc/levinson.hpp"

namespace gelp::lpc {

inline constexpr std::size_t kDefaultOrder = 24;
inline constexpr double kResponseFloor = 1e-5;
inline constexpr double kLagZeroBoost = 1e-9;

/// A = FFT(a zero-padded to fft_length), non-negative bins.
template <class T>
std::vector<std::complex<T>> lp_frequency_response(const LpcFrame<T>& frame, std::size_t fft_length) {
  require(fft_length > frame.order(), "FFT length must exceed the LP order");
  dsp::RealFft<T> fft(fft_length);
  std::vector<std::complex<T>> out(fft.bins());
  fft.forward(frame.a, out);
  return out;
}

/// H = exp(-i angle(A)) / max(|A|, eps).
template <class T>
std::complex<T> synthesis_response(std::complex<T> a, T eps) {
  const T mag = std::abs(a);
  const std::complex<T> unit = mag > T(0) ? std::conj(a) / mag : std::complex<T>(1, 0);
  return unit / std::max(mag, eps);
}

template <class T>
std::vector<std::complex<T>> synthesis_response(std::span<const std::complex<T>> a, T eps) {
  require(eps > T(0), "response floor must be positive");
  std::vector<std::complex<T>> h(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) h[i] = synthesis_response(a[i], eps);
  return h;
}

/// Per-frame all-pole envelopes with analysis (A_k) and synthesis (H_k)
/// responses sampled on the filtering STFT grid.
template <class T>
struct LpcTrack {
  std::vector<LpcFrame<T>> frames;
  dsp::ComplexFrames<T> analysis;   // K x bins
  dsp::ComplexFrames<T> synthesis;  // K x bins
  std::size_t fft_length = 0;

  std::size_t num_frames() const { return frames.size(); }

  /// Builds the responses for a given set of polynomials.
  static LpcTrack from_frames(std::vector<LpcFrame<T>> frames, std::size_t fft_length,
                              T eps = static_cast<T>(kResponseFloor)) {
    LpcTrack track;
    track.fft_length = fft_length;
    const auto bins = static_cast<Eigen::Index>(fft_length / 2 + 1);
    track.analysis.resize(static_cast<Eigen::Index>(frames.size()), bins);
    track.synthesis.resize(static_cast<Eigen::Index>(frames.size()), bins);
    for (std::size_t k = 0; k < frames.size(); ++k) {
      const auto a = lp_frequency_response(frames[k], fft_length);
      const auto h = synthesis_response<T>(a, eps);
      const auto row = static_cast<Eigen::Index>(k);
      for (Eigen::Index b = 0; b < bins; ++b) {
        track.analysis(row, b) = a[static_cast<std::size_t>(b)];
        track.synthesis(row, b) = h[static_cast<std::size_t>(b)];
      }
    }
    track.frames = std::move(frames);
    return track;
  }

  static LpcTrack white(std::size_t count, std::size_t order, std::size_t fft_length) {
    return from_frames(std::vector<LpcFrame<T>>(count, LpcFrame<T>::white(order)), fft_length);
  }
};

enum class DegeneratePolicy { fallback_white, throw_error };

/// Mel -> pseudo-inverse magnitude -> power -> autocorrelation -> Levinson-Durbin
/// for every frame.
template <class T>
LpcTrack<T> envelope_track_from_mel(const dsp::MelSpectrogram<T>& mel, const dsp::MelFilterbank<T>& fb,
                                    const dsp::StftConfig& cfg, std::size_t order = kDefaultOrder,
                                    T eps = static_cast<T>(kResponseFloor),
                                    DegeneratePolicy policy = DegeneratePolicy::fallback_white) {
  cfg.validate();
  const auto linear = dsp::mel_to_linear(mel, fb, static_cast<T>(dsp::kLinearFloor));
  std::vector<LpcFrame<T>> frames;
  frames.reserve(mel.num_frames());
  std::vector<T> power(fb.bins());
  for (std::size_t k = 0; k < mel.num_frames(); ++k) {
    for (std::size_t b = 0; b < power.size(); ++b) {
      const T v = linear(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(b));
      power[b] = v * v;
    }
    try {
      auto r = autocorr_from_power<T>(power, fb.fft_length(), order);
      r[0] += static_cast<T>(kLagZeroBoost) * r[0];
      frames.push_back(levinson_durbin<T>(r, order));
    } catch (const DegenerateSpectrum& e) {
      if (policy == DegeneratePolicy::throw_error)
        throw DegenerateSpectrum("frame " + std::to_string(k) + ": " + e.what());
      log::warn("frame " + std::to_string(k) + ": " + e.what() + "; using a white envelope");
      frames.push_back(LpcFrame<T>::white(order));
    }
  }
  return LpcTrack<T>::from_frames(std::move(frames), cfg.fft_length, eps);
}

}  // namespace gelp::lpc

#pragma once

#include "gelp/lpc/envelope.hpp"

namespace gelp::lpc {

/// Frame-wise filtering in the STFT domain: every centred frame is weighted by
/// the squared sine window (scaled so the weights sum to one), multiplied by
/// its frequency response on the zero-padded FFT grid, and the full
/// fft_length-sample result is overlap-added. For a stationary response this
/// is linear convolution with the impulse response truncated to
/// fft_length - window_length + 1 taps.
template <class T>
std::vector<T> filter_with_response(std::span<const T> x, const dsp::ComplexFrames<T>& response,
                                    const dsp::StftConfig& cfg) {
  dsp::require_finite(x, "filter input");
  const auto padded = dsp::pad_signal(x, cfg);
  const std::size_t frames = cfg.num_frames(x.size());
  require(static_cast<std::size_t>(response.rows()) == frames,
          "envelope has " + std::to_string(response.rows()) + " frames but the signal needs " +
              std::to_string(frames));
  require(static_cast<std::size_t>(response.cols()) == cfg.bins(), "envelope bin count mismatch");

  auto weights = dsp::cosine_window<T>(cfg.window_length);
  const T norm = T(2) / static_cast<T>(cfg.overlap());
  for (auto& w : weights) w = w * w * norm;

  const std::size_t n = cfg.fft_length;
  std::vector<T> out(padded.size() + n, T(0)), buf(cfg.window_length), full(n);
  std::vector<std::complex<T>> spec(cfg.bins());
  dsp::RealFft<T> fft(n);
  for (std::size_t k = 0; k < frames; ++k) {
    const std::size_t start = k * cfg.hop_length;
    for (std::size_t i = 0; i < cfg.window_length; ++i) buf[i] = padded[start + i] * weights[i];
    fft.forward(buf, spec);
    for (std::size_t b = 0; b < spec.size(); ++b) spec[b] *= response(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(b));
    fft.inverse(spec, full);
    for (std::size_t i = 0; i < n; ++i) out[start + i] += full[i];
  }
  return {out.begin() + static_cast<std::ptrdiff_t>(cfg.pad_left()),
          out.begin() + static_cast<std::ptrdiff_t>(cfg.pad_left() + x.size())};
}

/// x = ISTFT{STFT{e} . H}: all-pole synthesis filtering.
template <class T>
std::vector<T> apply_stft_filter(std::span<const T> e, const LpcTrack<T>& track, const dsp::StftConfig& cfg) {
  require(track.fft_length == cfg.fft_length, "envelope track and STFT use different FFT lengths");
  return filter_with_response(e, track.synthesis, cfg);
}

/// e = ISTFT{STFT{x} . A}: LP inverse (analysis) filtering.
template <class T>
std::vector<T> inverse_filter(std::span<const T> x, const LpcTrack<T>& track, const dsp::StftConfig& cfg) {
  require(track.fft_length == cfg.fft_length, "envelope track and STFT use different FFT lengths");
  return filter_with_response(x, track.analysis, cfg);
}

}  // namespace gelp::lpc

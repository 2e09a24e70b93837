#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "gelp/dsp/fft.hpp"
#include "gelp/dsp/waveform.hpp"

namespace gelp::dsp {

template <class T>
using RealFrames = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ComplexFrames = Eigen::Matrix<std::complex<T>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// How the signal is extended by half a window on each side so that frame k
/// is centred on sample k * hop.
enum class PadMode { reflect, zero };

struct StftConfig {
  std::size_t window_length = 400;
  std::size_t hop_length = 80;
  std::size_t fft_length = 512;
  PadMode pad_mode = PadMode::reflect;

  std::size_t bins() const { return fft_length / 2 + 1; }
  /// Frames overlapping any sample; the squared sine window sums to overlap()/2.
  std::size_t overlap() const { return window_length / hop_length; }
  std::size_t pad_left() const { return window_length / 2; }

  /// ceil(length / hop) + 1 centred frames; the last one reaches past the end
  /// so every sample is covered by `overlap()` frames.
  std::size_t num_frames(std::size_t length) const {
    return (length + hop_length - 1) / hop_length + 1;
  }
  std::size_t padded_length(std::size_t length) const {
    return (num_frames(length) - 1) * hop_length + window_length;
  }

  void validate() const {
    require(hop_length > 0 && window_length > 0, "STFT window and hop must be positive");
    require(window_length % hop_length == 0 && window_length / hop_length >= 2,
            "STFT window length must be an integer multiple (>= 2) of the hop");
    require(window_length % 2 == 0, "STFT window length must be even");
    require(is_power_of_two(fft_length), "FFT length must be a power of two");
    require(fft_length >= window_length, "FFT length must not be shorter than the window");
  }

  bool operator==(const StftConfig&) const = default;
};

/// Mel analysis: 25 ms window, 5 ms hop (200 Hz frames) at 16 kHz.
inline StftConfig feature_stft_config() { return {400, 80, 512, PadMode::reflect}; }

/// Envelope filtering: window = 2 hop, leaving 352 taps of zero padding for
/// the truncated synthesis impulse response.
inline StftConfig filter_stft_config() { return {160, 80, 512, PadMode::zero}; }

/// Sine ("cosine") window w[n] = sin(pi (n + 1/2) / L).
template <class T>
std::vector<T> cosine_window(std::size_t length) {
  std::vector<T> w(length);
  for (std::size_t n = 0; n < length; ++n)
    w[n] = static_cast<T>(std::sin(std::numbers::pi * (static_cast<double>(n) + 0.5) / length));
  return w;
}

/// Maps a position in the padded signal to an index in the original signal,
/// or -1 for a zero sample.
inline std::ptrdiff_t source_index(const StftConfig& cfg, std::size_t length, std::size_t padded_pos) {
  const auto n = static_cast<std::ptrdiff_t>(length);
  auto i = static_cast<std::ptrdiff_t>(padded_pos) - static_cast<std::ptrdiff_t>(cfg.pad_left());
  if (i >= 0 && i < n) return i;
  if (cfg.pad_mode == PadMode::zero) return -1;
  if (i < 0) i = -i;
  if (i >= n) i = 2 * (n - 1) - i;
  if (i < 0 || i >= n) throw InvalidArgument("signal too short for reflect padding");
  return i;
}

inline void check_framing(const StftConfig& cfg, std::size_t length) {
  cfg.validate();
  if (cfg.pad_mode == PadMode::reflect) {
    const std::size_t right = cfg.padded_length(length) - cfg.pad_left() - length;
    require(length > cfg.pad_left() && length > right,
            "signal of " + std::to_string(length) + " samples is too short for reflect padding");
  } else {
    require(length > 0, "cannot frame an empty signal");
  }
}

template <class T>
std::vector<T> pad_signal(std::span<const T> x, const StftConfig& cfg) {
  check_framing(cfg, x.size());
  std::vector<T> padded(cfg.padded_length(x.size()));
  for (std::size_t p = 0; p < padded.size(); ++p) {
    const auto i = source_index(cfg, x.size(), p);
    padded[p] = i < 0 ? T(0) : x[static_cast<std::size_t>(i)];
  }
  return padded;
}

template <class T>
struct Spectrogram {
  ComplexFrames<T> frames;  // K x bins
  StftConfig config;
  std::size_t origin_length = 0;

  std::size_t num_frames() const { return static_cast<std::size_t>(frames.rows()); }
  RealFrames<T> magnitude() const { return frames.cwiseAbs(); }
};

/// Windowed DFT of frames of an already padded signal; frame k starts at k * hop.
template <class T>
ComplexFrames<T> analyze_padded(std::span<const T> padded, const StftConfig& cfg, std::size_t frames) {
  require(padded.size() >= (frames - 1) * cfg.hop_length + cfg.window_length,
          "padded signal shorter than the frame span");
  const auto window = cosine_window<T>(cfg.window_length);
  RealFft<T> fft(cfg.fft_length);
  ComplexFrames<T> out(frames, cfg.bins());
  std::vector<T> buf(cfg.window_length);
  for (std::size_t k = 0; k < frames; ++k) {
    const T* src = padded.data() + k * cfg.hop_length;
    for (std::size_t n = 0; n < cfg.window_length; ++n) buf[n] = src[n] * window[n];
    fft.forward(buf, {out.row(k).data(), cfg.bins()});
  }
  return out;
}

/// Inverse DFT per frame, synthesis window, overlap-add and division by the
/// summed squared window; the result lives in the padded domain.
template <class T>
std::vector<T> synthesize_padded(const ComplexFrames<T>& frames, const StftConfig& cfg) {
  require(frames.allFinite(), "spectrogram contains non-finite values");
  require(static_cast<std::size_t>(frames.cols()) == cfg.bins(), "spectrogram bin count mismatch");
  const auto window = cosine_window<T>(cfg.window_length);
  const std::size_t count = static_cast<std::size_t>(frames.rows());
  const std::size_t length = count == 0 ? 0 : (count - 1) * cfg.hop_length + cfg.window_length;
  std::vector<T> out(length, T(0)), norm(length, T(0)), buf(cfg.window_length);
  RealFft<T> fft(cfg.fft_length);
  for (std::size_t k = 0; k < count; ++k) {
    fft.inverse({frames.row(k).data(), cfg.bins()}, buf);
    const std::size_t start = k * cfg.hop_length;
    for (std::size_t n = 0; n < cfg.window_length; ++n) {
      out[start + n] += buf[n] * window[n];
      norm[start + n] += window[n] * window[n];
    }
  }
  for (std::size_t i = 0; i < length; ++i)
    if (norm[i] > T(1e-10)) out[i] /= norm[i];
  return out;
}

template <class T>
Spectrogram<T> stft(std::span<const T> x, const StftConfig& cfg) {
  require_finite(x, "STFT input");
  const auto padded = pad_signal(x, cfg);
  return {analyze_padded<T>(padded, cfg, cfg.num_frames(x.size())), cfg, x.size()};
}

template <class T>
std::vector<T> istft(const Spectrogram<T>& spec) {
  const auto& cfg = spec.config;
  cfg.validate();
  require(spec.num_frames() == cfg.num_frames(spec.origin_length),
          "spectrogram frame count does not match its origin length");
  const auto padded = synthesize_padded(spec.frames, cfg);
  return {padded.begin() + static_cast<std::ptrdiff_t>(cfg.pad_left()),
          padded.begin() + static_cast<std::ptrdiff_t>(cfg.pad_left() + spec.origin_length)};
}

}  // namespace gelp::dsp

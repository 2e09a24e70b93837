#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include <Eigen/Dense>

#include "gelp/dsp/emphasis.hpp"
#include "gelp/dsp/stft.hpp"

namespace gelp::dsp {

inline constexpr std::size_t kDefaultMels = 80;
inline constexpr double kMelFloor = 1e-5;
inline constexpr double kLinearFloor = 1e-5;

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filterbank M (n_mels x bins) together with its pseudo-inverse.
/// Singular values below kPinvCutoff * sigma_max are dropped: with 80 bands on
/// a 512-point grid the lowest triangles share the same one or two bins, and
/// the untruncated inverse amplifies those directions by ~1e5. Immutable once built.
inline constexpr double kPinvCutoff = 1e-4;

template <class T>
class MelFilterbank {
 public:
  MelFilterbank() = default;

  /// Wraps an arbitrary non-negative filter matrix; every row needs a positive weight.
  explicit MelFilterbank(RealFrames<T> matrix, std::size_t fft_length = 0) : matrix_(std::move(matrix)) {
    require(matrix_.rows() > 0 && matrix_.cols() > 0, "empty filterbank");
    fft_length_ = fft_length == 0 ? 2 * (static_cast<std::size_t>(matrix_.cols()) - 1) : fft_length;
    require(static_cast<std::size_t>(matrix_.cols()) == fft_length_ / 2 + 1,
            "filterbank width does not match the FFT length");
    for (Eigen::Index i = 0; i < matrix_.rows(); ++i) {
      require((matrix_.row(i).array() >= T(0)).all(), "filterbank weights must be non-negative");
      if (matrix_.row(i).maxCoeff() <= T(0))
        throw InvalidArgument("mel filter " + std::to_string(i) +
                              " covers no FFT bin; too many mel bands for this FFT resolution");
    }
    const Eigen::MatrixXd m = matrix_.template cast<double>();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const double cutoff = kPinvCutoff * s(0);
    const Eigen::VectorXd inv = s.unaryExpr([cutoff](double v) { return v > cutoff ? 1.0 / v : 0.0; });
    pinv_ = (svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose()).template cast<T>();
  }

  std::size_t n_mels() const { return static_cast<std::size_t>(matrix_.rows()); }
  std::size_t bins() const { return static_cast<std::size_t>(matrix_.cols()); }
  std::size_t fft_length() const { return fft_length_; }
  const RealFrames<T>& matrix() const { return matrix_; }
  const RealFrames<T>& pseudo_inverse() const { return pinv_; }

 private:
  RealFrames<T> matrix_;
  RealFrames<T> pinv_;
  std::size_t fft_length_ = 0;
};

/// Centre frequency (Hz) of band `i` for a filterbank with uniformly
/// mel-spaced triangle vertices between fmin and fmax.
inline double mel_band_center(std::size_t i, std::size_t n_mels, double fmin, double fmax) {
  const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
  return mel_to_hz(lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(n_mels + 1));
}

template <class T>
MelFilterbank<T> build_mel_filterbank(std::size_t n_mels, std::size_t fft_length, int sample_rate,
                                      double fmin, double fmax) {
  require(n_mels >= 1, "need at least one mel band");
  require(is_power_of_two(fft_length), "FFT length must be a power of two");
  require(sample_rate > 0, "sample rate must be positive");
  require(fmin >= 0 && fmin < fmax && fmax <= sample_rate / 2.0,
          "mel range must satisfy 0 <= fmin < fmax <= sample_rate / 2");
  const std::size_t bins = fft_length / 2 + 1;
  std::vector<double> edges(n_mels + 2);
  edges.front() = fmin;
  edges.back() = fmax;
  for (std::size_t i = 0; i < n_mels; ++i) edges[i + 1] = mel_band_center(i, n_mels, fmin, fmax);

  RealFrames<T> m = RealFrames<T>::Zero(static_cast<Eigen::Index>(n_mels), static_cast<Eigen::Index>(bins));
  for (std::size_t i = 0; i < n_mels; ++i) {
    const double lo = edges[i], mid = edges[i + 1], hi = edges[i + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_length);
      double v = 0;
      if (f > lo && f <= mid) v = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) v = (hi - f) / (hi - mid);
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = static_cast<T>(v);
    }
  }
  return MelFilterbank<T>(std::move(m), fft_length);
}

template <class T>
MelFilterbank<T> default_mel_filterbank() {
  return build_mel_filterbank<T>(kDefaultMels, 512, kDefaultSampleRate, 0.0, kDefaultSampleRate / 2.0);
}

/// Natural-log mel energies, one row per frame.
template <class T>
struct MelSpectrogram {
  RealFrames<T> frames;  // K x n_mels
  double frame_rate = 200.0;

  std::size_t num_frames() const { return static_cast<std::size_t>(frames.rows()); }
  std::size_t n_mels() const { return static_cast<std::size_t>(frames.cols()); }
};

/// m = log(max(M |STFT(preemphasis(x))|, floor)).
template <class T>
MelSpectrogram<T> mel_spectrogram(std::span<const T> x, const MelFilterbank<T>& fb, const StftConfig& cfg,
                                  T alpha, int sample_rate = kDefaultSampleRate,
                                  T floor = static_cast<T>(kMelFloor)) {
  require(cfg.fft_length == fb.fft_length(), "filterbank and STFT use different FFT lengths");
  const auto emphasized = preemphasis<T>(x, alpha);
  const auto spec = stft<T>(emphasized, cfg);
  RealFrames<T> energies = spec.magnitude() * fb.matrix().transpose();
  MelSpectrogram<T> out;
  out.frames = energies.array().max(floor).log().matrix();
  out.frame_rate = static_cast<double>(sample_rate) / static_cast<double>(cfg.hop_length);
  return out;
}

/// X~ = max(M+ exp(m), eps) per frame.
template <class T>
RealFrames<T> mel_to_linear(const MelSpectrogram<T>& m, const MelFilterbank<T>& fb,
                            T eps = static_cast<T>(kLinearFloor)) {
  require(eps > 0, "linear floor must be positive");
  require(m.n_mels() == fb.n_mels(), "mel band count mismatch");
  require(m.frames.allFinite(), "mel spectrogram contains non-finite values");
  RealFrames<T> lin = m.frames.array().exp().matrix() * fb.pseudo_inverse().transpose();
  return lin.array().max(eps).matrix();
}

}  // namespace gelp::dsp

#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "gelp/core/error.hpp"

namespace gelp::dsp {

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Real-input FFT of a fixed power-of-two length. Holds scratch buffers, so
/// one instance must not be shared between threads.
template <class T>
class RealFft {
 public:
  using Complex = std::complex<T>;

  explicit RealFft(std::size_t n) : n_(n), time_(n), half_(n / 2 + 1), full_(n), full_out_(n) {
    require(is_power_of_two(n), "FFT length must be a power of two");
    fft_.SetFlag(Eigen::FFT<T>::HalfSpectrum);
  }

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// Zero-pads `in` (length <= n) and writes the n/2+1 non-negative-frequency bins.
  void forward(std::span<const T> in, std::span<Complex> out) {
    std::fill(time_.begin(), time_.end(), T(0));
    std::copy(in.begin(), in.end(), time_.begin());
    fft_.fwd(half_, time_);
    std::copy(half_.begin(), half_.end(), out.begin());
  }

  /// Inverse of `forward` for a conjugate-symmetric spectrum given by its
  /// non-negative bins. Imaginary parts of the DC and Nyquist bins are ignored.
  void inverse(std::span<const Complex> bins_in, std::span<T> out) {
    std::copy(bins_in.begin(), bins_in.end(), half_.begin());
    half_.front().imag(0);
    half_.back().imag(0);
    fft_.inv(time_, half_, static_cast<Eigen::Index>(n_));
    std::copy(time_.begin(), time_.begin() + static_cast<std::ptrdiff_t>(out.size()), out.begin());
  }

  /// out[n] = Re sum_{k < bins} Y[k] exp(+2 pi i k n / N), without scaling.
  /// This is the transpose of `forward` viewed as a real-linear map.
  void forward_transpose(std::span<const Complex> y, std::span<T> out) {
    std::fill(full_.begin(), full_.end(), Complex(0));
    std::copy(y.begin(), y.end(), full_.begin());
    complex_.inv(full_out_, full_);
    const T scale = static_cast<T>(n_);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = full_out_[i].real() * scale;
  }

 private:
  std::size_t n_;
  Eigen::FFT<T> fft_;
  Eigen::FFT<T> complex_;
  std::vector<T> time_;
  std::vector<Complex> half_;
  std::vector<Complex> full_;
  std::vector<Complex> full_out_;
};

}  // namespace gelp::dsp

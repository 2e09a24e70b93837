#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "gelp/dsp/fft.hpp"

namespace gelp::lpc {

/// Prediction polynomial A(z) = 1 + sum_j a[j] z^-j.
template <class T>
struct LpcFrame {
  std::vector<T> a{T(1)};
  /// Final prediction-error energy.
  T error = T(1);

  std::size_t order() const { return a.size() - 1; }

  static LpcFrame white(std::size_t order, T error = T(1)) {
    LpcFrame f;
    f.a.assign(order + 1, T(0));
    f.a[0] = T(1);
    f.error = error;
    return f;
  }
};

/// Autocorrelation lags 0..max_lag of the even, conjugate-symmetric power
/// spectrum whose non-negative bins are given: r = IFFT(P).
template <class T>
std::vector<T> autocorr_from_power(std::span<const T> power, std::size_t fft_length, std::size_t max_lag) {
  require(dsp::is_power_of_two(fft_length), "FFT length must be a power of two");
  require(power.size() == fft_length / 2 + 1, "power spectrum must have fft_length/2 + 1 bins");
  require(max_lag < fft_length, "max lag must be shorter than the FFT length");
  bool nonzero = false;
  for (T p : power) {
    require(p >= T(0) && std::isfinite(p), "power spectrum must be finite and non-negative");
    nonzero = nonzero || p > T(0);
  }
  if (!nonzero) throw DegenerateSpectrum("all-zero power spectrum has no envelope");
  std::vector<std::complex<T>> bins(power.begin(), power.end());
  std::vector<T> r(fft_length);
  dsp::RealFft<T> fft(fft_length);
  fft.inverse(bins, r);
  r.resize(max_lag + 1);
  return r;
}

/// Levinson-Durbin recursion for the normal equations of order `order`.
/// Throws DegenerateSpectrum when the autocorrelation is not positive definite.
template <class T>
LpcFrame<T> levinson_durbin(std::span<const T> r, std::size_t order) {
  require(r.size() > order, "autocorrelation needs more lags than the LP order");
  if (!(r[0] > T(0))) throw DegenerateSpectrum("autocorrelation r[0] must be positive");
  LpcFrame<T> f = LpcFrame<T>::white(order, r[0]);
  std::vector<T> prev(order + 1);
  T err = r[0];
  for (std::size_t i = 1; i <= order; ++i) {
    T acc = r[i];
    for (std::size_t j = 1; j < i; ++j) acc += f.a[j] * r[i - j];
    const T k = -acc / err;
    if (!(std::abs(k) < T(1))) throw DegenerateSpectrum("reflection coefficient outside the unit interval");
    prev = f.a;
    for (std::size_t j = 1; j < i; ++j) f.a[j] = prev[j] + k * prev[i - j];
    f.a[i] = k;
    err *= T(1) - k * k;
    if (!(err > T(0))) throw DegenerateSpectrum("prediction error energy is not positive");
  }
  f.error = err;
  return f;
}

}  // namespace gelp::lpc

#pragma once

#include <span>
#include <vector>

#include "gelp/dsp/waveform.hpp"

namespace gelp::dsp {

inline constexpr double kPreemphasis = 0.97;

/// y[n] = x[n] - alpha x[n-1], y[0] = x[0].
template <class T>
std::vector<T> preemphasis(std::span<const T> x, T alpha) {
  require(alpha >= 0 && alpha < 1, "pre-emphasis coefficient must lie in [0, 1)");
  require_finite(x, "pre-emphasis input");
  std::vector<T> y(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) y[n] = n == 0 ? x[0] : x[n] - alpha * x[n - 1];
  return y;
}

/// Recursive inverse of `preemphasis`: x[n] = y[n] + alpha x[n-1].
template <class T>
std::vector<T> deemphasis(std::span<const T> y, T alpha) {
  require(alpha >= 0 && alpha < 1, "de-emphasis coefficient must lie in [0, 1) for stability");
  require_finite(y, "de-emphasis input");
  std::vector<T> x(y.size());
  T prev = 0;
  for (std::size_t n = 0; n < y.size(); ++n) prev = x[n] = y[n] + alpha * prev;
  return x;
}

template <class T>
Waveform<T> preemphasis(const Waveform<T>& x, T alpha) {
  return {preemphasis<T>(x.samples, alpha), x.sample_rate};
}

template <class T>
Waveform<T> deemphasis(const Waveform<T>& y, T alpha) {
  return {deemphasis<T>(y.samples, alpha), y.sample_rate};
}

}  // namespace gelp::dsp

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "gelp/core/error.hpp"

namespace gelp::dsp {

inline constexpr int kDefaultSampleRate = 16000;

/// Mono audio at a fixed sample rate.
template <class T>
struct Waveform {
  std::vector<T> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

template <class T>
void require_finite(std::span<const T> x, const char* what) {
  for (T v : x)
    if (!std::isfinite(v)) throw NonFiniteError(std::string(what) + " contains non-finite samples");
}

template <class T>
void validate(const Waveform<T>& w) {
  require(w.sample_rate > 0, "sample rate must be positive");
  require_finite<T>(w.samples, "waveform");
}

}  // namespace gelp::dsp

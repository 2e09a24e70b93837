#pragma once

#include "gelp/dsp/stft.hpp"

namespace gelp::dsp {

/// Output row t sits at frame position t / factor; rows between two frames
/// are linearly interpolated and rows past the last frame hold its value.
template <class T>
RealFrames<T> upsample_linear(const RealFrames<T>& frames, std::size_t factor) {
  require(frames.rows() >= 1 && frames.cols() >= 1, "cannot upsample an empty frame sequence");
  require(factor >= 1, "upsampling factor must be >= 1");
  const auto k = static_cast<std::size_t>(frames.rows());
  RealFrames<T> out(static_cast<Eigen::Index>(k * factor), frames.cols());
  for (std::size_t t = 0; t < k * factor; ++t) {
    const std::size_t lo = t / factor;
    const auto row = static_cast<Eigen::Index>(t);
    if (lo + 1 >= k) {
      out.row(row) = frames.row(static_cast<Eigen::Index>(k - 1));
      continue;
    }
    const T frac = static_cast<T>(t % factor) / static_cast<T>(factor);
    out.row(row) = (T(1) - frac) * frames.row(static_cast<Eigen::Index>(lo)) +
                   frac * frames.row(static_cast<Eigen::Index>(lo + 1));
  }
  return out;
}

}  // namespace gelp::dsp

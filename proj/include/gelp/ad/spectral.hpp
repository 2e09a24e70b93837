#pragma once

#include "gelp/ad/ops.hpp"
#include "gelp/dsp/stft.hpp"

// STFT analysis and STFT-domain filtering as differentiable graphs built from
// linear_map / rdft / cmul_const.
namespace gelp::ad {

/// (B, T) -> (B, K * window): centred frames with the config's padding.
template <class T>
LinearMap<T> frame_map(const dsp::StftConfig& cfg, std::size_t batch, std::size_t length) {
  dsp::check_framing(cfg, length);
  const std::size_t frames = cfg.num_frames(length), win = cfg.window_length;
  SparseRows<T> rows;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < frames; ++k)
      for (std::size_t n = 0; n < win; ++n) {
        const auto src = dsp::source_index(cfg, length, k * cfg.hop_length + n);
        if (src >= 0) rows.add(b * length + static_cast<std::size_t>(src), T(1));
        rows.end_row();
      }
  return LinearMap<T>::make({batch, length}, {batch, frames * win}, std::move(rows));
}

/// (B, K * fft_length) -> (B, T): overlap-add of full-length frame outputs
/// starting at k * hop in the padded domain, cropped to the original span.
template <class T>
LinearMap<T> overlap_add_map(const dsp::StftConfig& cfg, std::size_t batch, std::size_t length) {
  const std::size_t frames = cfg.num_frames(length), n = cfg.fft_length, hop = cfg.hop_length;
  SparseRows<T> rows;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t p = t + cfg.pad_left();
      const std::size_t k_lo = p + 1 > n ? (p + 1 - n + hop - 1) / hop : 0;
      const std::size_t k_hi = std::min(frames - 1, p / hop);
      for (std::size_t k = k_lo; k <= k_hi; ++k) rows.add((b * frames + k) * n + (p - k * hop), T(1));
      rows.end_row();
    }
  return LinearMap<T>::make({batch, frames * n}, {batch, length}, std::move(rows));
}

template <class T>
Tensor<T> window_tensor(std::vector<T> w) {
  const std::size_t n = w.size();
  return Tensor<T>({1, 1, n}, std::move(w));
}

/// Windowed frames (B, K, window) of x (B, T, 1).
template <class T>
Tensor<T> stft_frames(const Tensor<T>& x, const dsp::StftConfig& cfg) {
  require(x.dim(2) == 1, "STFT input must have a single channel");
  const auto frames = linear_map(x, frame_map<T>(cfg, x.dim(0), x.dim(1)));
  const std::size_t k = cfg.num_frames(x.dim(1));
  return mul_broadcast(reshape(frames, {x.dim(0), k, cfg.window_length}),
                       window_tensor(dsp::cosine_window<T>(cfg.window_length)));
}

/// Interleaved complex STFT (B, K, 2 * bins); matches dsp::stft.
template <class T>
Tensor<T> stft(const Tensor<T>& x, const dsp::StftConfig& cfg) {
  return rdft(stft_frames(x, cfg), cfg.fft_length);
}

/// |STFT| as sqrt(re^2 + im^2 + eps), shape (B, K, bins).
template <class T>
Tensor<T> stft_magnitude(const Tensor<T>& x, const dsp::StftConfig& cfg, T eps = T(1e-12)) {
  const auto spec = stft(x, cfg);
  const std::size_t b = spec.dim(0), k = spec.dim(1), bins = spec.dim(2) / 2;
  const auto pairs = reshape(spec, {b, k * bins, 2});
  const auto power = sum_to(square(pairs), Shape{b, k * bins, 1});
  return reshape(sqrt(add_scalar(power, eps)), {b, k, bins});
}

/// Packs a K x bins complex response into a constant (1, K, 2 * bins) tensor.
template <class T>
Tensor<T> response_tensor(const dsp::ComplexFrames<T>& response) {
  const auto k = static_cast<std::size_t>(response.rows()), bins = static_cast<std::size_t>(response.cols());
  std::vector<T> v(k * bins * 2);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < bins; ++j) {
      const auto c = response(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      v[(i * bins + j) * 2] = c.real();
      v[(i * bins + j) * 2 + 1] = c.imag();
    }
  return Tensor<T>({1, k, 2 * bins}, std::move(v));
}

/// Differentiable counterpart of lpc::filter_with_response for x (B, T, 1):
/// frame -> squared-window weights -> rdft -> (. H) -> inverse rdft (full
/// fft_length) -> overlap-add.
template <class T>
Tensor<T> stft_filter(const Tensor<T>& x, const Tensor<T>& response, const dsp::StftConfig& cfg) {
  require(x.dim(2) == 1, "filter input must have a single channel");
  const std::size_t batch = x.dim(0), length = x.dim(1), frames = cfg.num_frames(length);
  const std::size_t n = cfg.fft_length, bins = cfg.bins();
  require(response.dim(1) == frames,
          "envelope has " + std::to_string(response.dim(1)) + " frames but the signal needs " + std::to_string(frames));

  auto weights = dsp::cosine_window<T>(cfg.window_length);
  const T norm = T(2) / static_cast<T>(cfg.overlap());
  for (auto& w : weights) w = w * w * norm;
  // Inverse real DFT = rdft_transpose after weighting bin k by c_k / N,
  // c_k = 1 at DC and Nyquist, 2 elsewhere.
  std::vector<T> inverse_weights(2 * bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const T c = (k == 0 || k == bins - 1) ? T(1) : T(2);
    inverse_weights[2 * k] = inverse_weights[2 * k + 1] = c / static_cast<T>(n);
  }

  const auto framed = reshape(linear_map(x, frame_map<T>(cfg, batch, length)), {batch, frames, cfg.window_length});
  const auto spec = rdft(mul_broadcast(framed, window_tensor(std::move(weights))), n);
  const auto filtered = mul_broadcast(cmul_const(spec, response), window_tensor(std::move(inverse_weights)));
  const auto time = rdft_transpose(filtered, n, n);
  return linear_map(reshape(time, {batch, frames * n, 1}), overlap_add_map<T>(cfg, batch, length));
}

}  // namespace gelp::ad

#pragma once

#include <optional>

#include "gelp/nn/weights.hpp"

// The dilated gated-convolution stack shared by the generator, the
// conditioning network and the discriminator.
namespace gelp::nn {

template <class T>
using Tensor = ad::Tensor<T>;

template <class T>
struct BlockOutput {
  Tensor<T> residual;  // y_i, undefined for the last layer
  Tensor<T> skip;      // h_i
};

/// h = tanh(W^f * x + V^f c) . sigmoid(W^g * x + V^g c);
/// y = W^o h + x (residual) or W^o h. `c` must already match the block's
/// output length. The two gates are evaluated as one convolution with the
/// filter and gate kernels side by side.
template <class T>
BlockOutput<T> gated_block(const Tensor<T>& x, const std::optional<Tensor<T>>& c, const Weights<T>& w,
                           const std::string& prefix, std::size_t dilation, ad::Padding padding, bool use_residual,
                           bool last) {
  const std::size_t r = w[prefix + "wf"].dim(2);
  const auto kernel = ad::concat_channels<T>({w[prefix + "wf"], w[prefix + "wg"]});
  const auto bias = ad::concat_channels<T>({w[prefix + "bf"], w[prefix + "bg"]});
  auto pre = ad::conv1d(x, kernel, bias, dilation, padding);
  if (c) {
    require(c->dim(1) == pre.dim(1) && c->dim(0) == pre.dim(0),
            "conditioning " + ad::to_string(c->shape()) + " does not match the block output " +
                ad::to_string(pre.shape()));
    const auto v = ad::concat_channels<T>({w[prefix + "vf"], w[prefix + "vg"]});
    pre = ad::add(pre, ad::conv1d(*c, v, 1, ad::Padding::same));
  }
  BlockOutput<T> out;
  out.skip = ad::mul(ad::tanh(ad::slice_channels(pre, 0, r)), ad::sigmoid(ad::slice_channels(pre, r, r)));
  if (last) return out;
  out.residual = use_residual ? ad::conv1d(out.skip, w[prefix + "wo"], w[prefix + "bo"], 1, ad::Padding::same)
                              : out.skip;
  if (use_residual) out.residual = ad::add(out.residual, ad::crop_time_center(x, out.residual.dim(1)));
  return out;
}

/// First post-net affine restricted to one skip: the rows of w1 that belong
/// to channels [offset, offset + skip channels) of the concatenation.
template <class T>
Tensor<T> postnet_part(const Tensor<T>& skip, const Tensor<T>& w1, std::size_t offset) {
  require(offset + skip.dim(2) <= w1.dim(1), "postnet weight has fewer input channels than the skips");
  return ad::conv1d(skip, ad::slice_time(w1, offset, skip.dim(2)), 1, ad::Padding::same);
}

/// Running sum of postnet_part over the skips; a shorter (valid padding)
/// term centre-crops the sum so far.
template <class T>
Tensor<T> accumulate(const Tensor<T>& acc, const Tensor<T>& term) {
  if (!acc.defined()) return term;
  const std::size_t len = std::min(acc.dim(1), term.dim(1));
  return ad::add(ad::crop_time_center(acc, len), ad::crop_time_center(term, len));
}

template <class T>
Tensor<T> postnet_head(const Tensor<T>& acc, const Tensor<T>& b1, const Tensor<T>& w2, const Tensor<T>& b2) {
  return ad::conv1d(ad::tanh(ad::add_broadcast(acc, b1)), w2, b2, 1, ad::Padding::same);
}

/// concat(skips) -> affine -> tanh -> affine. The first affine is applied
/// per skip with the matching slice of its weight and summed, which equals
/// the affine of the concatenation without materializing it. Skips of
/// different lengths (valid padding) are centre-cropped to the shortest.
template <class T>
Tensor<T> postnet(const std::vector<Tensor<T>>& skips, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
                  const Tensor<T>& b2) {
  require(!skips.empty(), "postnet needs at least one skip connection");
  std::size_t channels = 0;
  for (const auto& s : skips) channels += s.dim(2);
  require(channels == w1.dim(1), "postnet weight expects " + std::to_string(w1.dim(1)) + " concatenated channels, got " +
                                     std::to_string(channels));
  Tensor<T> acc;
  std::size_t offset = 0;
  for (const auto& s : skips) {
    acc = accumulate(acc, postnet_part(s, w1, offset));
    offset += s.dim(2);
  }
  return postnet_head(acc, b1, w2, b2);
}

/// Full stack: input projection, gated layers, post-net. `c` (B, T, Rc) is
/// required iff the config has a conditioning path.
template <class T>
Tensor<T> stack_forward(const NetConfig& cfg, const Weights<T>& w, const Tensor<T>& input,
                        const std::optional<Tensor<T>>& c = std::nullopt) {
  require(input.dim(2) == cfg.input_channels, "network expects " + std::to_string(cfg.input_channels) +
                                                  " input channels, got " + std::to_string(input.dim(2)));
  require(c.has_value() == (cfg.conditioning_channels > 0),
          cfg.conditioning_channels > 0 ? "network needs a conditioning input" : "network takes no conditioning input");
  if (c) {
    require(c->dim(2) == cfg.conditioning_channels, "conditioning has " + std::to_string(c->dim(2)) +
                                                        " channels, expected " +
                                                        std::to_string(cfg.conditioning_channels));
    require(c->dim(1) == input.dim(1) && c->dim(0) == input.dim(0),
            "conditioning " + ad::to_string(c->shape()) + " does not match input " + ad::to_string(input.shape()));
  }
  auto x = input;
  if (cfg.normalize_input) {
    const auto& sd = w["norm.std"];
    std::vector<T> inv(sd.data().begin(), sd.data().end());
    for (auto& v : inv) v = T(1) / v;
    x = ad::mul_broadcast(ad::add_broadcast(x, ad::neg(w["norm.mean"])), Tensor<T>(sd.shape(), std::move(inv)));
  }
  auto h = ad::conv1d(x, w["input.w"], w["input.b"], 1, ad::Padding::same);
  // Skips are folded into the post-net sum as they are produced, so only one
  // is alive at a time.
  Tensor<T> acc;
  const std::size_t layers = cfg.num_layers();
  for (std::size_t i = 0; i < layers; ++i) {
    const std::size_t d = cfg.dilation(i);
    std::optional<Tensor<T>> ci;
    if (c) {
      const std::size_t out_len =
          cfg.padding == ad::Padding::same ? h.dim(1) : ad::ConvGeometry::make(cfg.filter_width, d, cfg.padding, h.dim(1)).out_len;
      ci = ad::crop_time_center(*c, out_len);
    }
    auto block = gated_block(h, ci, w, "layer" + std::to_string(i) + ".", d, cfg.padding, cfg.use_residual,
                             i + 1 == layers);
    acc = accumulate(acc, postnet_part(block.skip, w["post.w1"], i * cfg.residual_channels));
    if (i + 1 < layers) h = std::move(block.residual);
  }
  return postnet_head(acc, w["post.b1"], w["post.w2"], w["post.b2"]);
}

/// White noise z (B, T, 1) and audio-rate context (B, T, Rc) -> excitation (B, T, 1).
template <class T>
Tensor<T> generator_forward(const NetConfig& cfg, const Weights<T>& w, const Tensor<T>& z, const Tensor<T>& c) {
  require(z.dim(2) == 1, "generator input must be a single noise channel");
  return stack_forward(cfg, w, z, std::optional<Tensor<T>>(c));
}

/// Mel frames (B, K, n_mels) -> frame-rate context (B, K, Rc).
template <class T>
Tensor<T> conditioner_forward(const NetConfig& cfg, const Weights<T>& w, const Tensor<T>& mel) {
  require(mel.dim(1) >= 1, "conditioner needs at least one frame");
  return stack_forward(cfg, w, mel);
}

/// Receptive-field crops x (B, RF, 1), c (B, RF, Rc) -> critic scores (B, 1, 1).
template <class T>
Tensor<T> discriminator_forward(const NetConfig& cfg, const Weights<T>& w, const Tensor<T>& x, const Tensor<T>& c) {
  const std::size_t rf = receptive_field(cfg);
  require(cfg.padding == ad::Padding::valid, "discriminator must use valid padding");
  require(x.dim(1) == rf, "discriminator crops must be " + std::to_string(rf) + " samples, got " +
                              std::to_string(x.dim(1)));
  const auto score = stack_forward(cfg, w, x, std::optional<Tensor<T>>(c));
  require(score.dim(1) == 1 && score.dim(2) == 1, "discriminator did not collapse to one score");
  return score;
}

/// Linear upsampling of frame-rate features (B, K, C) to `length` samples at
/// `factor` samples per frame (frame k sits at sample k * factor; the last
/// frame is held). Differentiable.
template <class T>
ad::LinearMap<T> upsample_map(std::size_t batch, std::size_t frames, std::size_t factor, std::size_t length) {
  require(frames >= 1 && factor >= 1, "upsampling needs at least one frame and factor >= 1");
  ad::SparseRows<T> rows;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t k = t / factor;
      const T frac = static_cast<T>(t % factor) / static_cast<T>(factor);
      if (k + 1 < frames) {
        rows.add(b * frames + k, T(1) - frac);
        if (frac != T(0)) rows.add(b * frames + k + 1, frac);
      } else {
        rows.add(b * frames + frames - 1, T(1));
      }
      rows.end_row();
    }
  return ad::LinearMap<T>::make({batch, frames}, {batch, length}, std::move(rows));
}

template <class T>
Tensor<T> upsample(const Tensor<T>& frames, std::size_t factor, std::size_t length) {
  return ad::linear_map(frames, upsample_map<T>(frames.dim(0), frames.dim(1), factor, length));
}

}  // namespace gelp::nn

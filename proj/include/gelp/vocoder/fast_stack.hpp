#pragma once

#include <algorithm>

#include <Eigen/Dense>

#include "gelp/nn/models.hpp"

// Inference-only evaluation of same-padded stacks (G and C) without a graph.
// Time is processed in blocks small enough that a block's gate
// pre-activations, skips and residuals stay in cache; results match
// nn::stack_forward up to rounding.
namespace gelp::vocoder {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Frame-rate conditioning that is linearly upsampled on the fly (frame k
/// sits at sample k * factor, the last frame is held). `offset` is the
/// absolute sample index of the first input row.
template <class T>
struct FrameConditioning {
  const RowMatrix<T>* frames = nullptr;
  std::size_t factor = 1;
  std::size_t offset = 0;
};

template <class T>
class FastStack {
 public:
  static constexpr std::size_t kBlock = 256;

  FastStack(const nn::NetConfig& cfg, const nn::Weights<T>& w) : cfg_(cfg) {
    require(cfg.padding == ad::Padding::same, "fast inference supports same padding only");
    nn::check_weights(w, cfg);
    const std::size_t r = cfg.residual_channels;
    if (cfg.normalize_input) {
      mean_ = row(w["norm.mean"]);
      inv_std_ = row(w["norm.std"]).cwiseInverse();
    }
    input_w_ = matrix(w["input.w"], 0);
    input_b_ = row(w["input.b"]);
    for (std::size_t i = 0; i < cfg.num_layers(); ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      Layer layer;
      layer.dilation = cfg.dilation(i);
      for (std::size_t j = 0; j < cfg.filter_width; ++j) {
        RowMatrix<T> k(r, 2 * r);
        k << matrix(w[p + "wf"], j), matrix(w[p + "wg"], j);
        layer.taps.push_back(std::move(k));
      }
      layer.bias.resize(2 * r);
      layer.bias << row(w[p + "bf"]), row(w[p + "bg"]);
      if (cfg.conditioning_channels > 0) {
        layer.v.resize(cfg.conditioning_channels, 2 * r);
        layer.v << matrix(w[p + "vf"], 0), matrix(w[p + "vg"], 0);
      }
      if (w.contains(p + "wo")) {
        layer.wo = matrix(w[p + "wo"], 0);
        layer.bo = row(w[p + "bo"]);
      }
      layer.post = matrix(w["post.w1"], 0).middleRows(static_cast<Eigen::Index>(i * r), static_cast<Eigen::Index>(r));
      layers_.push_back(std::move(layer));
    }
    post_b1_ = row(w["post.b1"]);
    post_w2_ = matrix(w["post.w2"], 0);
    post_b2_ = row(w["post.b2"]);
    std::size_t max_pad = 0;
    for (const auto& l : layers_) max_pad = std::max(max_pad, (cfg.filter_width - 1) / 2 * l.dilation);
    margin_ = max_pad;
  }

  const nn::NetConfig& config() const { return cfg_; }

  /// input (L, Cin) -> output (L, Cout).
  RowMatrix<T> run(const RowMatrix<T>& input, const FrameConditioning<T>& cond = {}) const {
    require(static_cast<std::size_t>(input.cols()) == cfg_.input_channels,
            "network expects " + std::to_string(cfg_.input_channels) + " input channels");
    require((cond.frames != nullptr) == (cfg_.conditioning_channels > 0),
            cfg_.conditioning_channels > 0 ? "network needs a conditioning input" : "network takes no conditioning input");
    if (cond.frames) {
      require(static_cast<std::size_t>(cond.frames->cols()) == cfg_.conditioning_channels &&
                  cond.frames->rows() >= 1 && cond.factor >= 1,
              "conditioning frames do not match the network");
    }
    const auto len = static_cast<Eigen::Index>(input.rows());
    const auto r = static_cast<Eigen::Index>(cfg_.residual_channels);
    const auto m = static_cast<Eigen::Index>(margin_);

    // Residual stream with zero margins so every tap reads inside the buffer.
    RowMatrix<T> cur = RowMatrix<T>::Zero(len + 2 * m, r), next = RowMatrix<T>::Zero(len + 2 * m, r);
    if (cfg_.normalize_input) {
      const RowMatrix<T> x = (input.rowwise() - mean_).array().rowwise() * inv_std_.array();
      cur.middleRows(m, len).noalias() = x * input_w_;
    } else {
      cur.middleRows(m, len).noalias() = input * input_w_;
    }
    cur.middleRows(m, len).rowwise() += input_b_;

    RowMatrix<T> acc = RowMatrix<T>::Zero(len, static_cast<Eigen::Index>(cfg_.skip_channels));
    RowMatrix<T> pre(kBlock, 2 * r), skip(kBlock, r), vc;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& layer = layers_[i];
      if (cond.frames) vc.noalias() = *cond.frames * layer.v;
      const auto half = static_cast<Eigen::Index>((cfg_.filter_width - 1) / 2 * layer.dilation);
      for (Eigen::Index t0 = 0; t0 < len; t0 += static_cast<Eigen::Index>(kBlock)) {
        const Eigen::Index n = std::min<Eigen::Index>(static_cast<Eigen::Index>(kBlock), len - t0);
        auto p = pre.topRows(n);
        p.rowwise() = layer.bias;
        for (std::size_t j = 0; j < layer.taps.size(); ++j) {
          const Eigen::Index src = m + t0 - half + static_cast<Eigen::Index>(j * layer.dilation);
          p.noalias() += cur.middleRows(src, n) * layer.taps[j];
        }
        if (cond.frames) add_upsampled(p, vc, cond, static_cast<std::size_t>(t0));
        auto s = skip.topRows(n);
        s.array() = p.leftCols(r).array().tanh() * sigmoid(p.rightCols(r).array());
        acc.middleRows(t0, n).noalias() += s * layer.post;
        if (i + 1 < layers_.size()) {
          auto out = next.middleRows(m + t0, n);
          if (layer.wo.size() > 0) {
            out.noalias() = s * layer.wo;
            out.rowwise() += layer.bo;
            if (cfg_.use_residual) out += cur.middleRows(m + t0, n);
          } else {
            out = s;
          }
        }
      }
      if (i + 1 < layers_.size()) cur.swap(next);
    }
    acc.rowwise() += post_b1_;
    RowMatrix<T> out = acc.array().tanh().matrix() * post_w2_;
    out.rowwise() += post_b2_;
    return out;
  }

 private:
  struct Layer {
    std::size_t dilation = 1;
    std::vector<RowMatrix<T>> taps;  // per tap: r x 2r (filter | gate)
    Eigen::Matrix<T, 1, Eigen::Dynamic> bias, bo;
    RowMatrix<T> v, wo, post;
  };

  template <class A>
  static auto sigmoid(const A& a) {
    return (T(1) + (-a).exp()).inverse();
  }

  static RowMatrix<T> matrix(const ad::Tensor<T>& t, std::size_t tap) {
    const auto in = static_cast<Eigen::Index>(t.dim(1)), out = static_cast<Eigen::Index>(t.dim(2));
    return Eigen::Map<const RowMatrix<T>>(t.raw() + tap * t.dim(1) * t.dim(2), in, out);
  }
  static Eigen::Matrix<T, 1, Eigen::Dynamic> row(const ad::Tensor<T>& t) {
    return Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(t.raw(), static_cast<Eigen::Index>(t.size()));
  }

  template <class Block>
  static void add_upsampled(Block& p, const RowMatrix<T>& vc, const FrameConditioning<T>& cond, std::size_t t0) {
    const std::size_t frames = static_cast<std::size_t>(vc.rows());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const std::size_t t = cond.offset + t0 + static_cast<std::size_t>(i);
      const std::size_t k = t / cond.factor;
      if (k + 1 < frames) {
        const T frac = static_cast<T>(t % cond.factor) / static_cast<T>(cond.factor);
        const auto a = static_cast<Eigen::Index>(k);
        p.row(i) += (T(1) - frac) * vc.row(a) + frac * vc.row(a + 1);
      } else {
        p.row(i) += vc.row(static_cast<Eigen::Index>(frames - 1));
      }
    }
  }

  nn::NetConfig cfg_;
  Eigen::Matrix<T, 1, Eigen::Dynamic> mean_, inv_std_, input_b_, post_b1_, post_b2_;
  RowMatrix<T> input_w_, post_w2_;
  std::vector<Layer> layers_;
  std::size_t margin_ = 0;
};

}  // namespace gelp::vocoder

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>
#include <span>

#include "gelp/ad/backward.hpp"
#include "gelp/ad/spectral.hpp"

namespace gelp::loss {

template <class T>
using Tensor = ad::Tensor<T>;

struct LossWeights {
  double lambda1 = 10.0;  // STFT regression
  double lambda2 = 10.0;  // gradient penalty
  double lambda3 = 1.0;   // R1

  void validate() const {
    require(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0, "loss weights must be non-negative");
  }
};

struct LossReport {
  double l_stft = 0;
  double l_gan_d = 0;
  double l_gan_g = 0;
  double l_gp = 0;
  double l_r1 = 0;
  double total_g = 0;
  double total_d = 0;

  bool finite() const {
    for (double v : {l_stft, l_gan_d, l_gan_g, l_gp, l_r1, total_g, total_d})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// mean over batch, frames and bins of (|STFT(x)| - |STFT(x_hat)|)^2.
template <class T>
Tensor<T> stft_loss(const Tensor<T>& x, const Tensor<T>& x_hat, const dsp::StftConfig& cfg) {
  require(x.shape() == x_hat.shape(),
          "STFT loss needs equal shapes, got " + ad::to_string(x.shape()) + " and " + ad::to_string(x_hat.shape()));
  const auto diff = ad::sub(ad::stft_magnitude(x, cfg), ad::stft_magnitude(x_hat, cfg));
  return ad::mean(ad::square(diff));
}

template <class T>
struct GanTerms {
  Tensor<T> d_term;  // -mean(real) + mean(fake), minimized by D
  Tensor<T> g_term;  // -mean(fake), minimized by G
};

template <class T>
GanTerms<T> gan_loss(const Tensor<T>& scores_real, const Tensor<T>& scores_fake) {
  require(scores_real.size() > 0 && scores_fake.size() > 0, "critic scores must be non-empty");
  const auto fake = ad::mean(scores_fake);
  return {ad::add(ad::neg(ad::mean(scores_real)), fake), ad::neg(fake)};
}

/// Critic on a batch of crops: x (N, L, 1), c (N, L, Rc) -> scores (N, 1, 1).
template <class T>
using Critic = std::function<Tensor<T>(const Tensor<T>& x, const Tensor<T>& c)>;

namespace detail {

/// Per-crop gradient of the summed critic output with respect to `x`, kept on
/// the graph. Zero when the critic ignores `x`.
template <class T>
Tensor<T> input_gradient(const Critic<T>& critic, Tensor<T> x, const Tensor<T>& c) {
  if (!x.requires_grad()) x = Tensor<T>::parameter(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
  const auto scores = critic(x, c);
  auto g = ad::grad(ad::sum(scores), {x}, {.create_graph = true}).front();
  return g ? *g : Tensor<T>(x.shape());
}

/// Squared L2 norm of each crop: (N, L, 1) -> (N, 1, 1).
template <class T>
Tensor<T> squared_norms(const Tensor<T>& g) {
  return ad::sum_to(ad::square(g), ad::Shape{g.dim(0), 1, 1});
}

}  // namespace detail

/// mean over crops of (||grad D(x~, c)||_2 - 1)^2 with x~ = e x + (1 - e) x_hat
/// and one interpolation weight e per crop. Stays on the graph, so the result
/// can be differentiated with respect to the critic's parameters.
template <class T>
Tensor<T> gradient_penalty(const Tensor<T>& real, const Tensor<T>& fake, const Tensor<T>& c, const Critic<T>& critic,
                           std::span<const T> epsilon) {
  require(real.shape() == fake.shape(), "real and fake crops differ in shape");
  require(epsilon.size() == real.dim(0), "need one interpolation weight per crop");
  const std::size_t n = real.dim(0);
  const Tensor<T> e({n, 1, 1}, std::vector<T>(epsilon.begin(), epsilon.end()));
  std::vector<T> one_minus(epsilon.begin(), epsilon.end());
  for (auto& v : one_minus) v = T(1) - v;
  const auto mixed = ad::add(ad::mul_broadcast(real, e), ad::mul_broadcast(fake, Tensor<T>({n, 1, 1}, one_minus)));
  const auto g = detail::input_gradient(critic, mixed, c);
  // The tiny offset keeps d sqrt finite when a crop's gradient vanishes.
  const auto norms = ad::sqrt(ad::add_scalar(detail::squared_norms(g), T(1e-12)));
  return ad::mean(ad::square(ad::add_scalar(norms, T(-1))));
}

template <class T>
Tensor<T> gradient_penalty(const Tensor<T>& real, const Tensor<T>& fake, const Tensor<T>& c, const Critic<T>& critic,
                           std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<T> epsilon(real.dim(0));
  for (auto& e : epsilon) e = static_cast<T>(uniform(rng));
  return gradient_penalty(real, fake, c, critic, std::span<const T>(epsilon));
}

/// mean over crops of ||grad_x D(x, c)||^2 at real data.
template <class T>
Tensor<T> r1_penalty(const Tensor<T>& real, const Tensor<T>& c, const Critic<T>& critic) {
  return ad::mean(detail::squared_norms(detail::input_gradient(critic, real, c)));
}

/// lambda1 L_STFT - L_GAN. Only the fake-score part of L_GAN depends on the
/// generator, so its gradient equals that of lambda1 L_STFT + g_term.
template <class T>
Tensor<T> generator_total(const Tensor<T>& l_stft, const Tensor<T>& d_term, const LossWeights& w) {
  w.validate();
  return ad::sub(ad::scale(l_stft, static_cast<T>(w.lambda1)), d_term);
}

/// L_GAN + lambda2 L_GP + lambda3 L_R1.
template <class T>
Tensor<T> discriminator_total(const Tensor<T>& d_term, const Tensor<T>& gp, const Tensor<T>& r1, const LossWeights& w) {
  w.validate();
  return ad::add(ad::add(d_term, ad::scale(gp, static_cast<T>(w.lambda2))), ad::scale(r1, static_cast<T>(w.lambda3)));
}

/// Appends one CSV row per iteration; writes the header when the file is new.
class LossLog {
 public:
  explicit LossLog(const std::filesystem::path& path, bool append = false) {
    const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
    if (fresh) out_ << "iteration,phase,l_stft,l_gan_d,l_gan_g,l_gp,l_r1,total_g,total_d\n";
    out_ << std::setprecision(9);
  }

  void append(std::size_t iteration, std::string_view phase, const LossReport& r) {
    out_ << iteration << ',' << phase << ',' << r.l_stft << ',' << r.l_gan_d << ',' << r.l_gan_g << ',' << r.l_gp
         << ',' << r.l_r1 << ',' << r.total_g << ',' << r.total_d << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace gelp::loss

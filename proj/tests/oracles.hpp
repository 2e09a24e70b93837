#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance suite. Nothing here uses the library's FFT or filtering code.

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace oracle {

using Vec = std::vector<double>;

inline Vec white_noise(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  Vec v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

/// Monic polynomial coefficients of prod (1 - p z^-1) over the given roots
/// (conjugate pairs expected so the result is real).
inline Vec poly_from_roots(const std::vector<std::complex<double>>& roots) {
  std::vector<std::complex<double>> c{1.0};
  for (const auto& r : roots) {
    std::vector<std::complex<double>> next(c.size() + 1, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
      next[i] += c[i];
      next[i + 1] -= r * c[i];
    }
    c = std::move(next);
  }
  Vec a(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) a[i] = c[i].real();
  return a;
}

/// Random real minimum-phase A(z) of even order with pole radii in
/// [rmin, rmax]. Each conjugate pair gets its own slice of (0, pi), which keeps
/// the envelope's dynamic range speech-like instead of piling poles together.
inline Vec random_stable_ar(std::size_t order, std::uint64_t seed, double rmin = 0.5, double rmax = 0.95) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> radius(rmin, rmax), unit(0.0, 1.0);
  std::vector<std::complex<double>> roots;
  const double slice = std::numbers::pi / double(order / 2);
  for (std::size_t i = 0; i < order / 2; ++i) {
    const auto p = std::polar(radius(rng), slice * (double(i) + 0.1 + 0.8 * unit(rng)));
    roots.push_back(p);
    roots.push_back(std::conj(p));
  }
  return poly_from_roots(roots);
}

/// Order-14 vowel-like envelope: five formants at 500..4500 Hz with the given
/// pole radius plus two damped high-frequency pairs (16 kHz sampling).
inline Vec formant_ar(double radius) {
  std::vector<std::complex<double>> roots;
  auto pair = [&](double hz, double r) {
    const auto p = std::polar(r, 2 * std::numbers::pi * hz / 16000.0);
    roots.push_back(p);
    roots.push_back(std::conj(p));
  };
  for (double hz : {500.0, 1500.0, 2500.0, 3500.0, 4500.0}) pair(hz, radius);
  pair(6000.0, 0.5);
  pair(7000.0, 0.5);
  return poly_from_roots(roots);
}

/// Direct-form II all-pole recursion y[n] = x[n] - sum_j a[j] y[n-j].
inline Vec all_pole_filter(const Vec& a, const Vec& x) {
  const std::size_t p = a.size() - 1;
  Vec state(p, 0.0), y(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    double w = x[n];
    for (std::size_t j = 1; j <= p; ++j) w -= a[j] * state[j - 1];
    for (std::size_t j = p; j > 1; --j) state[j - 1] = state[j - 2];
    if (p > 0) state[0] = w;
    y[n] = w;
  }
  return y;
}

/// Direct FIR convolution y[n] = sum_j a[j] x[n-j].
inline Vec fir_filter(const Vec& a, const Vec& x) {
  Vec y(x.size(), 0.0);
  for (std::size_t n = 0; n < x.size(); ++n)
    for (std::size_t j = 0; j < a.size() && j <= n; ++j) y[n] += a[j] * x[n - j];
  return y;
}

/// SNR of `estimate` against `reference` over [begin, end).
inline double snr_db(const Vec& reference, const Vec& estimate, std::size_t begin, std::size_t end) {
  double sig = 0, err = 0;
  for (std::size_t n = begin; n < end; ++n) {
    sig += reference[n] * reference[n];
    err += (reference[n] - estimate[n]) * (reference[n] - estimate[n]);
  }
  return 10 * std::log10(sig / err);
}

/// Autocorrelation of the all-pole impulse response, from a long truncation.
inline Vec ar_autocorrelation(const Vec& a, std::size_t max_lag, std::size_t taps = 20000) {
  Vec impulse(taps, 0.0);
  impulse[0] = 1.0;
  const auto h = all_pole_filter(a, impulse);
  Vec r(max_lag + 1, 0.0);
  for (std::size_t l = 0; l <= max_lag; ++l)
    for (std::size_t n = 0; n + l < taps; ++n) r[l] += h[n] * h[n + l];
  return r;
}

/// Normal equations R a_{1..p} = -r_{1..p} solved as a dense Toeplitz system.
inline Vec toeplitz_lpc(const Vec& r, std::size_t order) {
  Eigen::MatrixXd m(order, order);
  Eigen::VectorXd rhs(order);
  for (std::size_t i = 0; i < order; ++i) {
    rhs(i) = -r[i + 1];
    for (std::size_t j = 0; j < order; ++j) m(i, j) = r[i > j ? i - j : j - i];
  }
  const Eigen::VectorXd sol = m.fullPivLu().solve(rhs);
  Vec a{1.0};
  for (std::size_t i = 0; i < order; ++i) a.push_back(sol(i));
  return a;
}

/// Largest root magnitude of z^p + a1 z^{p-1} + ... + ap via the companion matrix.
inline double max_root_magnitude(const Vec& a) {
  const std::size_t p = a.size() - 1;
  if (p == 0) return 0.0;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t j = 0; j < p; ++j) c(0, j) = -a[j + 1] / a[0];
  for (std::size_t i = 1; i < p; ++i) c(i, i - 1) = 1.0;
  return Eigen::EigenSolver<Eigen::MatrixXd>(c, false).eigenvalues().cwiseAbs().maxCoeff();
}

/// |A(e^{jw})| evaluated directly at w = 2 pi k / n_fft.
inline double polynomial_magnitude(const Vec& a, std::size_t k, std::size_t n_fft) {
  std::complex<double> s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * std::polar(1.0, -2 * std::numbers::pi * double(k * j) / n_fft);
  return std::abs(s);
}

/// Welch power spectrum: mean |DFT|^2 of Hann-windowed, half-overlapping
/// segments, by direct summation over bins 0..n/2.
inline Vec welch_psd(const Vec& x, std::size_t n) {
  Vec psd(n / 2 + 1, 0.0), w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / n);
  std::vector<std::complex<double>> twiddle(n);
  for (std::size_t i = 0; i < n; ++i) twiddle[i] = std::polar(1.0, -2 * std::numbers::pi * double(i) / n);
  std::size_t count = 0;
  for (std::size_t start = 0; start + n <= x.size(); start += n / 2, ++count)
    for (std::size_t k = 0; k <= n / 2; ++k) {
      std::complex<double> s = 0;
      for (std::size_t i = 0; i < n; ++i) s += x[start + i] * w[i] * twiddle[(k * i) % n];
      psd[k] += std::norm(s);
    }
  for (auto& p : psd) p /= double(count);
  return psd;
}

/// Geometric over arithmetic mean, excluding DC and Nyquist.
inline double spectral_flatness(const Vec& psd) {
  double logsum = 0, sum = 0;
  for (std::size_t k = 1; k + 1 < psd.size(); ++k) {
    logsum += std::log(psd[k]);
    sum += psd[k];
  }
  const double n = double(psd.size() - 2);
  return std::exp(logsum / n) / (sum / n);
}

}  // namespace oracle

#pragma once

#include <chrono>

#include "gelp/train/data.hpp"
#include "gelp/vocoder/synthesis.hpp"

namespace gelp::vocoder {

struct BenchOptions {
  double seconds = 10.0;
  std::size_t threads = 1;
  std::uint64_t seed = 1;
  // Output samples timed on the per-sample reference path; 0 skips it.
  std::size_t reference_samples = 64;
};

template <class T>
struct BenchResult {
  dsp::Waveform<T> audio;
  std::size_t samples = 0;
  double seconds = 0;
  double samples_per_second = 0;
  double real_time_factor = 0;  // compute time / audio duration
  std::size_t reference_samples = 0;
  double reference_seconds = 0;
  double reference_samples_per_second = 0;

  double speedup() const { return reference_samples_per_second > 0 ? samples_per_second / reference_samples_per_second : 0; }
};

/// Times mel -> waveform synthesis of `seconds` of synthetic speech, then the
/// same generator evaluated one output sample at a time from a fresh
/// receptive-field window each, at evenly spaced positions.
template <class T>
BenchResult<T> benchmark(const VocoderModel<T>& model, const BenchOptions& opt) {
  require(opt.seconds > 0, "benchmark duration must be positive");
  require(opt.threads >= 1, "at least one thread is needed");
  using clock = std::chrono::steady_clock;
  const Synthesizer<T> syn(model);
  const auto input = train::synthetic_corpus<T>(1, opt.seconds, opt.seed).front();
  const auto mel = extract_mel(input, syn.filterbank());
  const std::size_t length = synthesis_length(mel.num_frames());
  std::size_t chunk = kChunkSamples;
  if (opt.threads > 1) chunk = std::max(kHop, (length + opt.threads - 1) / opt.threads);

  BenchResult<T> r;
  auto t0 = clock::now();
  r.audio = syn.synthesize(mel, opt.seed, chunk, opt.threads);
  r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  r.samples = r.audio.samples.size();
  r.samples_per_second = static_cast<double>(r.samples) / r.seconds;
  r.real_time_factor = r.seconds / (static_cast<double>(r.samples) / dsp::kDefaultSampleRate);

  if (opt.reference_samples > 0) {
    const auto ctx = syn.context(mel);
    const auto z = gaussian_noise<T>(length, opt.seed);
    const std::size_t n = std::min(opt.reference_samples, length);
    T sink = 0;
    t0 = clock::now();
    for (std::size_t k = 0; k < n; ++k) sink += syn.excitation_at(ctx, z, k * length / n);
    r.reference_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    if (!std::isfinite(static_cast<double>(sink))) throw NonFiniteError("reference path produced a non-finite sample");
    r.reference_samples = n;
    r.reference_samples_per_second = static_cast<double>(n) / r.reference_seconds;
  }
  return r;
}

}  // namespace gelp::vocoder

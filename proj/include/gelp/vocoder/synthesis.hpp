#pragma once

#include <atomic>
#include <random>
#include <thread>

#include "gelp/dsp/mel.hpp"
#include "gelp/lpc/stft_filter.hpp"
#include "gelp/vocoder/fast_stack.hpp"
#include "gelp/vocoder/model.hpp"

namespace gelp::vocoder {

inline constexpr std::size_t kHop = 80;
inline constexpr std::size_t kChunkSamples = 30 * static_cast<std::size_t>(dsp::kDefaultSampleRate);

/// Log-mel features of a 16 kHz waveform (pre-emphasis applied inside).
template <class T>
dsp::MelSpectrogram<T> extract_mel(const dsp::Waveform<T>& w, const dsp::MelFilterbank<T>& fb) {
  dsp::validate(w);
  if (w.sample_rate != dsp::kDefaultSampleRate)
    throw InvalidArgument("expected a " + std::to_string(dsp::kDefaultSampleRate) + " Hz waveform, got " +
                          std::to_string(w.sample_rate) + " Hz");
  require(!w.samples.empty(), "cannot analyze an empty waveform");
  return dsp::mel_spectrogram<T>(w.samples, fb, dsp::feature_stft_config(), static_cast<T>(dsp::kPreemphasis));
}

/// Output length for K frames: (K - 1) hops, which is within one hop of the
/// analyzed signal's length.
inline std::size_t synthesis_length(std::size_t frames) {
  require(frames >= 2, "synthesis needs at least two feature frames");
  return (frames - 1) * kHop;
}

/// Unit-variance Gaussian noise from a seeded mt19937_64.
template <class T>
std::vector<T> gaussian_noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> z(n);
  for (auto& v : z) v = static_cast<T>(normal(rng));
  return z;
}

/// Sample range [begin, end) whose generator output is taken from one chunk.
struct Chunk {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline std::vector<Chunk> plan_chunks(std::size_t length, std::size_t chunk_samples) {
  require(chunk_samples >= kHop, "chunks must be at least one hop long");
  std::vector<Chunk> chunks;
  for (std::size_t b = 0; b < length; b += chunk_samples) chunks.push_back({b, std::min(length, b + chunk_samples)});
  // A short trailing chunk would not have room for the cross-fade.
  if (chunks.size() > 1 && chunks.back().end - chunks.back().begin < kHop) {
    chunks[chunks.size() - 2].end = chunks.back().end;
    chunks.pop_back();
  }
  return chunks;
}

/// G and C prepared for inference; immutable and shareable across threads.
template <class T>
class Synthesizer {
 public:
  explicit Synthesizer(const VocoderModel<T>& model)
      : g_(model.g_cfg, model.g), c_(model.c_cfg, model.c), rf_(nn::receptive_field(model.g_cfg)),
        fb_(dsp::default_mel_filterbank<T>()) {
    model.check();
  }

  const dsp::MelFilterbank<T>& filterbank() const { return fb_; }
  std::size_t receptive_field() const { return rf_; }
  const FastStack<T>& generator() const { return g_; }

  /// Frame-rate context (K, Rc).
  RowMatrix<T> context(const dsp::MelSpectrogram<T>& mel) const {
    require(mel.n_mels() == c_.config().input_channels, "mel band count does not match the conditioning network");
    return c_.run(mel.frames);
  }

  /// Generator output for noise z, evaluated in chunks that each carry one
  /// receptive field of context on both sides; neighbouring chunks are
  /// cross-faded over one hop. Chunks run on up to `threads` workers.
  std::vector<T> excitation(const RowMatrix<T>& ctx, std::span<const T> z, std::size_t chunk_samples = kChunkSamples,
                            std::size_t threads = 1) const {
    const std::size_t length = z.size();
    const auto chunks = plan_chunks(length, chunk_samples);
    std::vector<std::vector<T>> parts(chunks.size());
    std::vector<std::size_t> starts(chunks.size());
    auto work = [&](std::size_t i) {
      const std::size_t lo = chunks[i].begin > rf_ ? chunks[i].begin - rf_ : 0;
      const std::size_t hi = std::min(length, chunks[i].end + kHop + rf_);
      RowMatrix<T> input = Eigen::Map<const RowMatrix<T>>(z.data() + lo, static_cast<Eigen::Index>(hi - lo), 1);
      const RowMatrix<T> out = g_.run(input, {&ctx, kHop, lo});
      parts[i].assign(out.data(), out.data() + out.size());
      starts[i] = lo;
    };
    run_parallel(chunks.size(), threads, work);

    std::vector<T> e(length);
    for (std::size_t i = 0; i < chunks.size(); ++i)
      for (std::size_t t = chunks[i].begin; t < chunks[i].end; ++t) {
        T v = parts[i][t - starts[i]];
        if (i > 0 && t < chunks[i].begin + kHop) {
          const T w = (static_cast<T>(t - chunks[i].begin) + T(0.5)) / static_cast<T>(kHop);
          v = w * v + (T(1) - w) * parts[i - 1][t - starts[i - 1]];
        }
        e[t] = v;
      }
    return e;
  }

  /// mel -> C -> G(z) -> all-pole envelope filter, in the pre-emphasized domain.
  std::vector<T> synthesize_emphasized(const dsp::MelSpectrogram<T>& mel, std::uint64_t seed,
                                       std::size_t chunk_samples = kChunkSamples, std::size_t threads = 1) const {
    const std::size_t length = synthesis_length(mel.num_frames());
    const auto ctx = context(mel);
    const auto z = gaussian_noise<T>(length, seed);
    const auto e = excitation(ctx, z, chunk_samples, threads);
    const auto cfg = dsp::filter_stft_config();
    const auto track = lpc::envelope_track_from_mel(mel, fb_, cfg);
    return lpc::apply_stft_filter<T>(e, track, cfg);
  }

  dsp::Waveform<T> synthesize(const dsp::MelSpectrogram<T>& mel, std::uint64_t seed,
                              std::size_t chunk_samples = kChunkSamples, std::size_t threads = 1) const {
    const auto x = synthesize_emphasized(mel, seed, chunk_samples, threads);
    return {dsp::deemphasis<T>(x, static_cast<T>(dsp::kPreemphasis)), dsp::kDefaultSampleRate};
  }

  /// One generator output sample computed from just its receptive-field
  /// window; the per-sample reference for throughput comparisons.
  T excitation_at(const RowMatrix<T>& ctx, std::span<const T> z, std::size_t t) const {
    const std::size_t half = (rf_ - 1) / 2;
    const std::size_t lo = t > half ? t - half : 0, hi = std::min(z.size(), t + half + 1);
    RowMatrix<T> input = Eigen::Map<const RowMatrix<T>>(z.data() + lo, static_cast<Eigen::Index>(hi - lo), 1);
    return g_.run(input, {&ctx, kHop, lo})(static_cast<Eigen::Index>(t - lo), 0);
  }

 private:
  template <class F>
  static void run_parallel(std::size_t count, std::size_t threads, F& work) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
      for (std::size_t i = 0; i < count; ++i) work(i);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k)
      pool.emplace_back([&, k] {
        try {
          for (std::size_t i = next++; i < count; i = next++) work(i);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  FastStack<T> g_;
  FastStack<T> c_;
  std::size_t rf_;
  dsp::MelFilterbank<T> fb_;
};

}  // namespace gelp::vocoder

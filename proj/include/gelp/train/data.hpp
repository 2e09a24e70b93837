#pragma once

#include <algorithm>
#include <filesystem>
#include <numbers>
#include <random>

#include "gelp/ad/ops.hpp"
#include "gelp/dsp/wav.hpp"

namespace gelp::train {

/// Every .wav file directly inside `dir`, in filename order.
template <class T>
std::vector<dsp::Waveform<T>> load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("corpus directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("corpus directory " + dir.string() + " contains no .wav files");
  std::vector<dsp::Waveform<T>> corpus;
  for (const auto& f : files) {
    auto w = dsp::read_wav<T>(f);
    if (w.sample_rate != dsp::kDefaultSampleRate)
      throw Error(f.string() + ": expected " + std::to_string(dsp::kDefaultSampleRate) + " Hz, got " +
                  std::to_string(w.sample_rate) + " Hz");
    corpus.push_back(std::move(w));
  }
  return corpus;
}

/// Harmonic tones with a slow pitch and amplitude drift over a white noise
/// floor, for desk-scale training runs.
template <class T>
std::vector<dsp::Waveform<T>> synthetic_corpus(std::size_t count, double seconds, std::uint64_t seed) {
  require(count >= 1 && seconds > 0, "synthetic corpus needs at least one non-empty utterance");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double fs = dsp::kDefaultSampleRate;
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  std::vector<dsp::Waveform<T>> corpus;
  for (std::size_t k = 0; k < count; ++k) {
    const double f0 = 100.0 + 200.0 * u(rng);
    const double amp = 0.2 + 0.3 * u(rng);
    const int harmonics = 1 + static_cast<int>(4 * u(rng));
    const double vibrato = 2.0 + 4.0 * u(rng), tremolo = 0.5 + 2.0 * u(rng);
    const double noise = 0.005 + 0.01 * u(rng);
    std::vector<double> phase_offset(static_cast<std::size_t>(harmonics));
    for (auto& p : phase_offset) p = 2 * std::numbers::pi * u(rng);
    std::normal_distribution<double> normal(0.0, noise);
    dsp::Waveform<T> w;
    w.samples.resize(n);
    double phase = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double time = static_cast<double>(t) / fs;
      phase += 2 * std::numbers::pi * f0 * (1.0 + 0.03 * std::sin(2 * std::numbers::pi * vibrato * time)) / fs;
      const double env = amp * (0.75 + 0.25 * std::sin(2 * std::numbers::pi * tremolo * time));
      double v = 0;
      for (int h = 1; h <= harmonics; ++h) v += std::sin(h * phase + phase_offset[static_cast<std::size_t>(h - 1)]) / h;
      w.samples[t] = static_cast<T>(env * v + normal(rng));
    }
    corpus.push_back(std::move(w));
  }
  return corpus;
}

/// Index into a signal of length n extended by whole-sample reflection
/// (..., x2, x1, x0, x1, x2, ...).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

/// Where a training segment came from.
struct SegmentSource {
  std::size_t utterance = 0;
  std::size_t offset = 0;
};

/// Draws a random utterance and a uniform offset; utterances shorter than the
/// segment are reflect-padded.
inline SegmentSource draw_segment(const std::vector<std::size_t>& lengths, std::size_t length, std::mt19937_64& rng) {
  require(!lengths.empty(), "the corpus is empty");
  std::uniform_int_distribution<std::size_t> pick(0, lengths.size() - 1);
  SegmentSource s;
  s.utterance = pick(rng);
  const std::size_t n = lengths[s.utterance];
  if (n > length) s.offset = std::uniform_int_distribution<std::size_t>(0, n - length)(rng);
  return s;
}

template <class T>
std::vector<T> cut_segment(const dsp::Waveform<T>& utterance, SegmentSource src, std::size_t length) {
  const auto& x = utterance.samples;
  require(!x.empty(), "cannot cut a segment from an empty utterance");
  std::vector<T> out(length);
  for (std::size_t t = 0; t < length; ++t)
    out[t] = x[reflect_index(static_cast<std::ptrdiff_t>(src.offset + t), x.size())];
  return out;
}

/// n uniform crop starts for windows of length rf inside a signal of `length`.
inline std::vector<std::size_t> crop_positions(std::size_t n, std::size_t rf, std::size_t length, std::mt19937_64& rng) {
  if (rf > length)
    throw InvalidArgument("crop length " + std::to_string(rf) + " exceeds the segment length " + std::to_string(length));
  std::uniform_int_distribution<std::size_t> pick(0, length - rf);
  std::vector<std::size_t> pos(n);
  for (auto& p : pos) p = pick(rng);
  return pos;
}

/// Gathers crops: (1, length, C) -> (n, rf, C).
template <class T>
ad::LinearMap<T> crop_map(const std::vector<std::size_t>& positions, std::size_t rf, std::size_t length) {
  ad::SparseRows<T> rows;
  for (auto p : positions) {
    require(p + rf <= length, "crop runs past the end of the segment");
    for (std::size_t i = 0; i < rf; ++i) {
      rows.add(p + i, T(1));
      rows.end_row();
    }
  }
  return ad::LinearMap<T>::make({1, length}, {positions.size(), rf}, std::move(rows));
}

}  // namespace gelp::train

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>

#include "gelp/core/binary_io.hpp"
#include "gelp/dsp/waveform.hpp"

// 16-bit PCM mono RIFF/WAVE.
namespace gelp::dsp {

template <class T = double>
Waveform<T> read_wav(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  io::expect_magic(in, "RIFF");
  io::read_le<std::uint32_t>(in, "RIFF size");
  io::expect_magic(in, "WAVE");
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  while (true) {
    char id[4];
    in.read(id, 4);
    if (!in) throw FormatError(path.string() + ": no data chunk");
    const auto size = io::read_le<std::uint32_t>(in, "chunk size");
    const std::string tag(id, 4);
    if (tag == "fmt ") {
      format = io::read_le<std::uint16_t>(in);
      channels = io::read_le<std::uint16_t>(in);
      rate = io::read_le<std::uint32_t>(in);
      io::read_le<std::uint32_t>(in);
      io::read_le<std::uint16_t>(in);
      bits = io::read_le<std::uint16_t>(in);
      in.ignore(size - 16 + (size & 1));
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) throw FormatError(path.string() + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16) throw FormatError(path.string() + ": only 16-bit PCM is supported");
      if (channels != 1) throw FormatError(path.string() + ": only mono audio is supported");
      Waveform<T> w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(size / 2);
      for (auto& s : w.samples) s = static_cast<T>(io::read_le<std::int16_t>(in, "sample")) / T(32768);
      return w;
    } else {
      in.ignore(size + (size & 1));
    }
  }
}

template <class T>
void write_wav(const std::filesystem::path& path, const Waveform<T>& w) {
  validate(w);
  const auto bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  io::atomic_write(path, [&](std::ostream& out) {
    out.write("RIFF", 4);
    io::write_le<std::uint32_t>(out, 36 + bytes);
    out.write("WAVEfmt ", 8);
    io::write_le<std::uint32_t>(out, 16);
    io::write_le<std::uint16_t>(out, 1);
    io::write_le<std::uint16_t>(out, 1);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
    io::write_le<std::uint16_t>(out, 2);
    io::write_le<std::uint16_t>(out, 16);
    out.write("data", 4);
    io::write_le<std::uint32_t>(out, bytes);
    for (T s : w.samples) {
      const double v = std::clamp(std::round(static_cast<double>(s) * 32768.0), -32768.0, 32767.0);
      io::write_le<std::int16_t>(out, static_cast<std::int16_t>(v));
    }
  });
}

}  // namespace gelp::dsp

#pragma once

#include <cstdint>
#include <filesystem>

#include "gelp/core/binary_io.hpp"
#include "gelp/dsp/stft.hpp"

// GELPF container: "GELPF", u32 version, u32 rows (K), u32 cols (C), then
// K * C little-endian f32 values in row-major order.
namespace gelp::dsp {

inline constexpr std::uint32_t kFeatureFileVersion = 1;

template <class T>
void write_features(const std::filesystem::path& path, const RealFrames<T>& frames) {
  require(frames.allFinite(), "features contain non-finite values");
  io::atomic_write(path, [&](std::ostream& out) {
    out.write("GELPF", 5);
    io::write_le<std::uint32_t>(out, kFeatureFileVersion);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(frames.rows()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(frames.cols()));
    for (Eigen::Index i = 0; i < frames.size(); ++i)
      io::write_le<float>(out, static_cast<float>(frames.data()[i]));
  });
}

template <class T>
RealFrames<T> read_features(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  io::expect_magic(in, "GELPF");
  const auto version = io::read_le<std::uint32_t>(in, "version");
  if (version != kFeatureFileVersion)
    throw FormatError(path.string() + ": unsupported GELPF version " + std::to_string(version));
  const auto rows = io::read_le<std::uint32_t>(in, "row count");
  const auto cols = io::read_le<std::uint32_t>(in, "column count");
  RealFrames<T> frames(rows, cols);
  for (Eigen::Index i = 0; i < frames.size(); ++i) frames.data()[i] = static_cast<T>(io::read_le<float>(in, "payload"));
  return frames;
}

}  // namespace gelp::dsp

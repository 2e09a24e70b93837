#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "gelp/core/error.hpp"

// Little-endian primitives shared by the WAV, GELPF and GELPW readers/writers.
namespace gelp::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <class V>
void write_le(std::ostream& out, V value) {
  static_assert(std::is_trivially_copyable_v<V>);
  out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <class V>
V read_le(std::istream& in, const char* what = "value") {
  static_assert(std::is_trivially_copyable_v<V>);
  V value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(V));
  if (!in) throw FormatError(std::string("unexpected end of file while reading ") + what);
  return value;
}

inline void expect_magic(std::istream& in, std::string_view magic) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!in || got != magic)
    throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

/// Writes through a temporary sibling file and renames it into place, so a
/// failed write never leaves a partial file at `path`.
template <class Writer>
void atomic_write(const std::filesystem::path& path, Writer&& writer) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    try {
      writer(out);
      out.flush();
      if (!out) throw Error("write failed for " + tmp.string());
    } catch (...) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw;
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace gelp::io

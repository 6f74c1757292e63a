#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "nvpf/core/tensor.hpp"

namespace nvpf {

// Tensor blob: the text header `TENSOR v1 <rank> <extents...>\n` followed by
// little-endian IEEE-754 doubles in row-major order.
namespace blob {

inline constexpr const char* kMagic = "TENSOR";
inline constexpr const char* kVersion = "v1";

inline std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

inline std::string encode(const Tensor& t) {
  std::string out = std::string(kMagic) + " " + kVersion + " " + std::to_string(t.rank());
  for (auto e : t.shape()) out += " " + std::to_string(e);
  out += "\n";
  const std::size_t header = out.size();
  out.resize(header + 8 * t.numel());
  auto v = t.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v[i]));
    std::memcpy(out.data() + header + 8 * i, &bits, 8);
  }
  return out;
}

inline Tensor decode(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw FormatError("tensor blob: missing header line", 1);
  std::istringstream header(bytes.substr(0, nl));
  std::string magic, version;
  std::size_t rank = 0;
  if (!(header >> magic >> version >> rank) || magic != kMagic)
    throw FormatError("tensor blob: malformed header", 1);
  if (version != kVersion) throw VersionError("tensor blob: unsupported version " + version);
  Shape shape(rank);
  for (auto& e : shape)
    if (!(header >> e) || e == 0) throw FormatError("tensor blob: bad extent", 1);
  std::string trailing;
  if (header >> trailing) throw FormatError("tensor blob: trailing header tokens", 1);
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != nl + 1 + 8 * n)
    throw FormatError("tensor blob: payload holds " + std::to_string(bytes.size() - nl - 1) +
                          " bytes, expected " + std::to_string(8 * n),
                      1);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, bytes.data() + nl + 1 + 8 * i, 8);
    data[i] = std::bit_cast<double>(to_little(bits));
  }
  return Tensor(std::move(shape), std::move(data));
}

inline std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace blob
}  // namespace nvpf

#include "biphoton/stats_io.hpp"

#include <cstring>
#include <fstream>
#include <string>

#include "biphoton/errors.hpp"
#include "endian.hpp"

namespace biphoton {

namespace {

constexpr std::uint16_t kStatsVersion = 1;
constexpr std::size_t kHeader = 32;

}  // namespace

void write_stats(const std::filesystem::path& path, const CoincidenceStats& s) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  std::uint8_t header[kHeader] = {};
  std::memcpy(header, "PCBS", 4);
  le::put<std::uint16_t>(header + 4, kStatsVersion);
  le::put<std::uint16_t>(header + 6, static_cast<std::uint16_t>(s.width));
  le::put<std::uint16_t>(header + 8, static_cast<std::uint16_t>(s.height));
  le::put<std::uint64_t>(header + 10, s.n_frames);
  le::put<std::uint16_t>(header + 18, static_cast<std::uint16_t>(s.window));
  header[20] = static_cast<std::uint8_t>((s.anticorr_center2 ? 1 : 0) | (s.postselect ? 2 : 0));
  out.write(reinterpret_cast<const char*>(header), kHeader);
  auto put_pixel = [&](PixelCoord p) {
    std::uint8_t b[8];
    le::put<std::uint32_t>(b, static_cast<std::uint32_t>(p.x));
    le::put<std::uint32_t>(b + 4, static_cast<std::uint32_t>(p.y));
    out.write(reinterpret_cast<const char*>(b), 8);
  };
  if (s.anticorr_center2) put_pixel(*s.anticorr_center2);
  if (s.postselect) put_pixel(*s.postselect);
  le::write_u64s(out, s.singles);
  le::write_u64s(out, s.pairs);
  if (s.anticorr_center2) le::write_u64s(out, s.anticorr);
  if (s.postselect) le::write_u64s(out, s.post);
  out.close();
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

CoincidenceStats read_stats(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::uint8_t header[kHeader];
  if (!in.read(reinterpret_cast<char*>(header), kHeader))
    throw FormatError(path.string() + ": truncated header (need 32 bytes at offset 0)");
  if (std::memcmp(header, "PCBS", 4) != 0) throw FormatError(path.string() + ": bad stats magic at offset 0");
  if (le::get<std::uint16_t>(header + 4) != kStatsVersion)
    throw FormatError(path.string() + ": unsupported stats version at offset 4");
  const int w = le::get<std::uint16_t>(header + 6), h = le::get<std::uint16_t>(header + 8);
  const int window = le::get<std::uint16_t>(header + 18);
  const std::uint8_t flags = header[20];
  if (flags > 3) throw FormatError(path.string() + ": unknown flags at offset 20");
  auto get_pixel = [&]() {
    std::uint8_t b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError(path.string() + ": truncated counter parameters");
    return PixelCoord{static_cast<int>(le::get<std::uint32_t>(b)), static_cast<int>(le::get<std::uint32_t>(b + 4))};
  };
  std::optional<PixelCoord> center2, post;
  if (flags & 1) center2 = get_pixel();
  if (flags & 2) post = get_pixel();
  CoincidenceStats s;
  try {
    s = CoincidenceStats(w, h, window, center2, post);
  } catch (const DomainError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  s.n_frames = le::get<std::uint64_t>(header + 10);
  if (!le::read_u64s(in, s.singles) || !le::read_u64s(in, s.pairs) || !le::read_u64s(in, s.anticorr) ||
      !le::read_u64s(in, s.post))
    throw FormatError(path.string() + ": truncated counter arrays");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes after counters");
  return s;
}

}  // namespace biphoton

#include "biphoton/grid_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "biphoton/config_file.hpp"
#include "biphoton/errors.hpp"
#include "endian.hpp"

namespace biphoton {

namespace {

constexpr std::uint16_t kGridVersion = 1;
constexpr std::uint8_t kBinary64 = 1;

}  // namespace

std::filesystem::path meta_path(const std::filesystem::path& grid_path) {
  auto p = grid_path;
  p += ".meta";
  return p;
}

void write_grid(const std::filesystem::path& path, const Grid<double>& grid, const GridMeta& meta) {
  if (grid.width() > 65535 || grid.height() > 65535) throw DomainError("grid too large for the grid format");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  std::uint8_t header[16] = {};
  std::memcpy(header, "PCBG", 4);
  le::put<std::uint16_t>(header + 4, kGridVersion);
  le::put<std::uint16_t>(header + 6, static_cast<std::uint16_t>(grid.width()));
  le::put<std::uint16_t>(header + 8, static_cast<std::uint16_t>(grid.height()));
  header[10] = kBinary64;
  out.write(reinterpret_cast<const char*>(header), 16);
  std::vector<std::uint64_t> bits(grid.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = std::bit_cast<std::uint64_t>(grid.values()[i]);
  le::write_u64s(out, bits);
  out.close();
  if (!out) throw FormatError("write failed for '" + path.string() + "'");

  std::ofstream side(meta_path(path), std::ios::trunc);
  side << "width = " << grid.width() << "\nheight = " << grid.height() << "\n";
  for (const auto& [k, v] : meta) side << k << " = " << v << "\n";
  if (!side) throw FormatError("write failed for '" + meta_path(path).string() + "'");
}

Grid<double> read_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::uint8_t header[16];
  if (!in.read(reinterpret_cast<char*>(header), 16))
    throw FormatError(path.string() + ": truncated header (need 16 bytes at offset 0)");
  if (std::memcmp(header, "PCBG", 4) != 0) throw FormatError(path.string() + ": bad grid magic at offset 0");
  if (le::get<std::uint16_t>(header + 4) != kGridVersion)
    throw FormatError(path.string() + ": unsupported grid version at offset 4");
  if (header[10] != kBinary64) throw FormatError(path.string() + ": unsupported value type at offset 10");
  Grid<double> grid(le::get<std::uint16_t>(header + 6), le::get<std::uint16_t>(header + 8));
  std::vector<std::uint64_t> bits(grid.size());
  if (!le::read_u64s(in, bits)) throw FormatError(path.string() + ": truncated grid values");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes after values");
  for (std::size_t i = 0; i < bits.size(); ++i) grid.values()[i] = std::bit_cast<double>(bits[i]);
  return grid;
}

GridMeta read_grid_meta(const std::filesystem::path& grid_path) {
  const auto p = meta_path(grid_path);
  if (!std::filesystem::exists(p)) return {};
  return KeyValueConfig::load(p).entries();
}

}  // namespace biphoton

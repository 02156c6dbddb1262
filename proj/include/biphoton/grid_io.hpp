#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "biphoton/grid.hpp"

namespace biphoton {

// Text sidecar (`<file>.meta`) of a grid file: units, axis origin/step and
// provenance as `key = value` lines.
using GridMeta = std::map<std::string, std::string>;

// 16-byte header ("PCBG", version u16, width u16, height u16, value type u8
// = 1 for IEEE-754 binary64, 5 reserved bytes), then row-major LE doubles.
void write_grid(const std::filesystem::path& path, const Grid<double>& grid, const GridMeta& meta = {});
Grid<double> read_grid(const std::filesystem::path& path);
// Reads the sidecar; empty if absent.
GridMeta read_grid_meta(const std::filesystem::path& grid_path);

std::filesystem::path meta_path(const std::filesystem::path& grid_path);

}  // namespace biphoton

#pragma once

#include <filesystem>

#include "biphoton/jpd.hpp"

namespace biphoton {

// Checkpoint layout: 32-byte header ("PCBS", version u16, width u16,
// height u16, frame count u64, window u16, flags u8 with bit 0 = anti-
// correlation counters and bit 1 = postselection counters), then the
// doubled symmetry center and/or postselected pixel as i32 pairs, then
// singles, pair counts and the optional counters, all little-endian u64.
void write_stats(const std::filesystem::path& path, const CoincidenceStats& stats);
CoincidenceStats read_stats(const std::filesystem::path& path);

}  // namespace biphoton

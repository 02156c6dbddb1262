#pragma once

#include <cstdint>
#include <cstdlib>
#include <optional>
#include <span>
#include <vector>

#include "biphoton/frame_io.hpp"
#include "biphoton/geometry.hpp"
#include "biphoton/grid.hpp"

namespace biphoton {

// Window half-width in pixels for a truncation length: pairs farther apart
// than the truncation length along either axis never contribute.
int window_pixels(double truncation_length, double pixel);

struct PixelOffset {
  int dx = 0;
  int dy = 0;
};

// Offsets of the forward half window, each unordered pair stored once at the
// pixel that comes first in row-major order: dy = 0 with dx = 1..W, then
// dy = 1..W with dx = -W..W. Size 2W^2 + 2W.
std::vector<PixelOffset> half_window_offsets(int window);
// Index into half_window_offsets, or -1 if (dx,dy) is not a forward offset.
int half_window_index(int dx, int dy, int window);

// Extra coincidence partners tracked per pixel: the base target plus its
// neighbors one row down and up (used by the same-row interpolation).
inline constexpr int kVariants = 3;
inline constexpr PixelOffset kVariantShift[kVariants] = {{0, 0}, {0, 1}, {0, -1}};

struct CoincidenceStats {
  int width = 0;
  int height = 0;
  int window = 0;
  std::uint64_t n_frames = 0;
  std::vector<std::uint64_t> singles;  // per pixel
  std::vector<std::uint64_t> pairs;    // pixel * K + offset index

  // Coincidences of p with reflect(p) = anticorr_center2 - p (and variants).
  std::optional<PixelCoord> anticorr_center2;
  std::vector<std::uint64_t> anticorr;  // pixel * kVariants + variant
  // Coincidences of p with the postselected pixel (and variants).
  std::optional<PixelCoord> postselect;
  std::vector<std::uint64_t> post;      // pixel * kVariants + variant

  CoincidenceStats() = default;
  CoincidenceStats(int width, int height, int window, std::optional<PixelCoord> anticorr_center2 = std::nullopt,
                   std::optional<PixelCoord> postselect = std::nullopt);

  int pixels() const { return width * height; }
  int offsets() const { return 2 * window * window + 2 * window; }
  int linear(PixelCoord p) const { return p.y * width + p.x; }
  bool inside(PixelCoord p) const { return p.x >= 0 && p.y >= 0 && p.x < width && p.y < height; }

  // Coincidence count of two distinct pixels within the window, any order.
  std::uint64_t pair_count(PixelCoord a, PixelCoord b) const;
  PixelCoord reflect(PixelCoord p) const;

  bool compatible(const CoincidenceStats& other) const;
  CoincidenceStats& operator+=(const CoincidenceStats& other);
  bool operator==(const CoincidenceStats&) const = default;
};

CoincidenceStats merge(const CoincidenceStats& a, const CoincidenceStats& b);

enum class AccumulateKernel { automatic, lit_list, bit_sliced };

struct AccumulateOptions {
  int window = 23;
  std::optional<PixelCoord> anticorr_center2;
  std::optional<PixelCoord> postselect;
  int threads = 1;
  AccumulateKernel kernel = AccumulateKernel::automatic;
  // automatic picks the lit-list kernel below this mean fill fraction.
  double sparse_fill = 0.01;
};

// Streaming accumulator. Frames are buffered in blocks of 2048 and reduced
// either per frame over the lit-pixel list (O(lit x window) per frame) or
// per block with bit-sliced words (64 frames per popcount).
class Accumulator {
 public:
  Accumulator(int width, int height, const AccumulateOptions& opts);

  void add(const BitFrame& frame);
  void add(std::span<const BitFrame> frames);
  // Flushes pending frames and returns the statistics so far.
  const CoincidenceStats& stats();
  CoincidenceStats finish();

  static constexpr int kWordsPerPixel = 32;
  static constexpr int kBlockFrames = 64 * kWordsPerPixel;

 private:
  void flush();
  void reduce_lit_list();
  void reduce_bit_sliced();

  AccumulateOptions opts_;
  CoincidenceStats stats_;
  std::vector<PixelOffset> offsets_;
  std::vector<BitFrame> block_;
  std::size_t pending_ = 0;
  std::size_t pending_lit_ = 0;
  std::vector<std::uint64_t> words_;
};

CoincidenceStats accumulate(std::span<const BitFrame> frames, const AccumulateOptions& opts);

// N * C_ab - C_a * C_b, exact.
__int128 covariance_numerator(const CoincidenceStats& s, PixelCoord a, PixelCoord b);
// Covariance of two distinct in-window pixels: <C_ab> - <C_a><C_b>.
double covariance(const CoincidenceStats& s, PixelCoord a, PixelCoord b);

// Same-row charge-smear correction.
struct SmearRule {
  bool enabled = true;
  int max_dx = 10;        // applies to same-row pairs with |dx| <= max_dx
  bool all_rows = false;  // imaging mode: every same-row pair
  bool applies(int dx, int dy) const { return enabled && dy == 0 && (all_rows || std::abs(dx) <= max_dx); }
};

// Mean covariance of a with b shifted one row up and down; the single
// available neighbor at the top/bottom ROI edge. Falls back to the raw
// covariance when the rule does not apply to (a,b).
double smear_interpolate(const CoincidenceStats& s, PixelCoord a, PixelCoord b, const SmearRule& rule = {});

struct MapInfo {
  std::uint64_t n_frames = 0;
  int window = 0;
  bool background_removed = false;
};

// Half-pixel grid, 2W x 2H cells; cell (x1+x2, y1+y2) holds the summed
// covariance of the pairs whose midpoint it is.
struct CentroidMap {
  Grid<double> values;
  MapInfo info;
};

// Full-pixel displacement grid (2W+1)^2, cell (dx+W, dy+W).
struct DifferenceMap {
  Grid<double> values;
  MapInfo info;
};

struct MarginalOptions {
  int truncation_window = -1;  // pixels; -1 uses the stats window
  SmearRule smear;
};

CentroidMap centroid_marginal(const CoincidenceStats& s, const MarginalOptions& opts = {});
DifferenceMap difference_marginal(const CoincidenceStats& s, const MarginalOptions& opts = {});

// Subtracts from each cell the lower median of the (2r+1)^2 window clipped
// to the map.
Grid<double> remove_background(const Grid<double>& map, int radius = 4);

Grid<double> direct_image(const CoincidenceStats& s);
Grid<double> cpd(const CoincidenceStats& s, const SmearRule& rule = {});
Grid<double> anticorr_map(const CoincidenceStats& s, const SmearRule& rule = {});

}  // namespace biphoton

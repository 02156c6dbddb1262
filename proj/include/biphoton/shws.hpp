#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biphoton/geometry.hpp"
#include "biphoton/grid.hpp"
#include "biphoton/legendre.hpp"

namespace biphoton {

enum class PeakQuality { ok, out_of_range, no_peak };

std::string to_string(PeakQuality q);
PeakQuality parse_quality(const std::string& text);

// Half-pixel cells whose centers fall inside an aperture (half-open cell),
// clipped to a map of the given size: [x0, x1) x [y0, y1).
struct CellRect {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};
CellRect aperture_cells(const OpticalConfig& cfg, ApertureIndex a, int map_width, int map_height);

struct Peak {
  Vec2 cell;       // fractional half-pixel cell coordinates
  Vec2 position;   // physical position
  PeakQuality quality = PeakQuality::no_peak;
};

// Largest-sum 4x4 block inside the aperture, then the weighted mean over the
// 8x8 block around it (clipped to the aperture, negative values as zero).
Peak find_peak(const Grid<double>& map, const OpticalConfig& cfg, ApertureIndex a);

struct ApertureGradient {
  ApertureIndex aperture;
  Vec2 kappa;      // rad/m
  Vec2 peak_cell;
  PeakQuality quality = PeakQuality::no_peak;
};

// kappa = (peak - aperture center) * k / f_sh; out_of_range outside the
// dynamic range.
ApertureGradient to_gradient(const Peak& peak, ApertureIndex a, const OpticalConfig& cfg);

struct GradientField {
  int cols = 0;
  int rows = 0;
  std::vector<ApertureGradient> apertures;  // row-major

  const ApertureGradient& at(ApertureIndex a) const { return apertures[static_cast<std::size_t>(a.row * cols + a.col)]; }
  ApertureGradient& at(ApertureIndex a) { return apertures[static_cast<std::size_t>(a.row * cols + a.col)]; }
  int count(PeakQuality q) const;
};

GradientField measure_gradients(const Grid<double>& map, const OpticalConfig& cfg);
// Component-wise difference; each aperture keeps the worse of the two flags.
GradientField subtract_reference(const GradientField& field, const GradientField& reference);

// Analytic aperture-averaged gradients of a modal phase.
GradientField synthesize_gradients(const legendre::LegendreCoeffs& coeffs, const OpticalConfig& cfg);

struct Reconstruction {
  legendre::LegendreCoeffs coeffs;
  double residual = 0.0;
  legendre::PhaseRaster raster;
  int used_apertures = 0;
};

Reconstruction reconstruct(const GradientField& field, const OpticalConfig& cfg, int max_degree = 5,
                           int raster_size = 120);

// Mean of the best 2x2 block over the standard deviation of the aperture
// outside the 10x10 block around it; +infinity when that deviation is zero.
double snr(const Grid<double>& map, const OpticalConfig& cfg, ApertureIndex a);

struct PowerLawFit {
  double amplitude = 0.0;
  double exponent = 0.0;
  double r_squared = 0.0;
  int used = 0;
  int excluded = 0;  // nonpositive or non-finite snr values
};

// Least squares of log(snr) on log(N). Needs at least three usable points
// with distinct N.
PowerLawFit fit_power_law(std::span<const std::pair<double, double>> points);

void write_gradients(std::ostream& out, const GradientField& field);
GradientField read_gradients(std::istream& in, const std::string& source = "<gradients>");

}  // namespace biphoton

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "biphoton/geometry.hpp"
#include "biphoton/grid.hpp"
#include "biphoton/legendre.hpp"

namespace biphoton {

// Phase samples (rad) on a regular physical grid. Sample (i,j) sits at
// lower + (i*step.x, j*step.y); values between samples are bilinear.
struct PhaseRasterPart {
  Grid<double> phase;
  Vec2 lower;
  Vec2 step;

  Vec2 upper() const { return lower + Vec2{(phase.width() - 1) * step.x, (phase.height() - 1) * step.y}; }
  double sample(Vec2 pos) const;
};

// Phase under test: modal part on the normalized domain plus an optional
// physical raster. Total phase is the sum of the parts present.
class PhaseScreen {
 public:
  PhaseScreen() : modal_(legendre::LegendreCoeffs{}) {}
  explicit PhaseScreen(legendre::LegendreCoeffs modal) : modal_(std::move(modal)) {}
  explicit PhaseScreen(PhaseRasterPart raster) : raster_(std::move(raster)) {}
  PhaseScreen(std::optional<legendre::LegendreCoeffs> modal, std::optional<PhaseRasterPart> raster);

  const std::optional<legendre::LegendreCoeffs>& modal() const { return modal_; }
  const std::optional<PhaseRasterPart>& raster() const { return raster_; }

  // Phase at a physical position; throws DomainError where the raster part
  // does not cover pos.
  double value(const OpticalConfig& cfg, Vec2 pos) const;
  bool covers(Vec2 pos) const;

  // Adds a modal term (used for corrections).
  PhaseScreen plus(const legendre::LegendreCoeffs& extra) const;

  // Samples the total phase on the n x n modal raster over the footprint.
  legendre::PhaseRaster rasterize(const OpticalConfig& cfg, int n = 120) const;

 private:
  std::optional<legendre::LegendreCoeffs> modal_;
  std::optional<PhaseRasterPart> raster_;
};

legendre::LegendreCoeffs saddle_coeffs();
legendre::LegendreCoeffs eq7_coeffs();

struct FilmParams {
  double rms = 1.5;            // rad, over the footprint
  double corr_len = 600e-6;    // m, 1/e radius of the phase autocorrelation
  std::uint64_t seed = 1;
  double samples_per_pitch = 16.0;
};

// Gaussian-filtered white noise over the aperture footprint (plus a margin),
// with zero mean and the requested RMS over the footprint.
PhaseRasterPart make_film(const OpticalConfig& cfg, const FilmParams& params);

// Parses "none", "saddle", "eq7" or "film(rms, corr_len, seed)"; corr_len
// accepts a length suffix.
PhaseScreen preset_screen(const OpticalConfig& cfg, const std::string& spec);

// Largest |aperture-averaged gradient| (rad/m) over all apertures, by
// sampling the phase on a dense grid inside each aperture.
double max_aperture_gradient(const OpticalConfig& cfg, const PhaseScreen& screen, int samples = 32);

}  // namespace biphoton

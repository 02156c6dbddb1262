#pragma once

#include "biphoton/geometry.hpp"
#include "biphoton/grid.hpp"
#include "biphoton/screen.hpp"
#include "biphoton/simulate.hpp"

namespace biphoton {

// Image-plane camera and aberration pupil for the anti-correlated imaging
// source. The phase screen is defined on the wavefront-sensor footprint and
// is mapped onto the pupil through the shared normalized domain.
struct ImagingConfig {
  int width = 105;
  int height = 71;
  double pixel = 26e-6;
  double wavelength = 808e-9;
  double focal = 0.15;          // lens mapping pupil momentum to image position
  double pupil_width = 4e-3;    // square pupil carrying the screen
  int pupil_samples = 128;
  int psf_halfwidth = 24;       // PSF window half-width in pixels
  double beam_fwhm = 4e-3;      // Gaussian envelope on the image plane

  double wave_number() const { return 2.0 * std::numbers::pi / wavelength; }
  // Pairs are centrally symmetric about the ROI center.
  Vec2 center_px() const { return {0.5 * (width - 1), 0.5 * (height - 1)}; }
  Vec2 pixel_position(double x, double y) const;
  SensorGrid sensor() const;
  // Twice the symmetry center in pixel indices (integral by construction).
  PixelCoord doubled_center() const { return {width - 1, height - 1}; }
  void validate() const;
};

// Detector defaults for the imaging camera (smaller ROI, lower pair rate).
DetectorModel imaging_detector();

// Resolution-target style mask: the left half of the ROI is opaque with
// transparent bars (vertical above the center row, horizontal below), the
// right half is open.
Grid<double> bar_mask(const ImagingConfig& icfg, int bar_px = 3);

// Expected anti-correlated pair image: envelope(u) T(u) T(2c - u).
Grid<double> effective_image(const ImagingConfig& icfg, const Grid<double>& mask, bool with_envelope = true);

// Point-spread function |h|^2 on a half-pixel grid centered on zero offset.
FocalSpectrum imaging_psf(const ImagingConfig& icfg, const OpticalConfig& screen_frame, const PhaseScreen& screen,
                          int oversample = 2);

class ImagingSource final : public PairSource {
 public:
  ImagingSource(const ImagingConfig& icfg, const Grid<double>& mask, const OpticalConfig& screen_frame,
                const PhaseScreen& screen);

  const SensorGrid& sensor() const override { return sensor_; }
  PhotonPair sample(Rng& rng) const override;
  const FocalSpectrum& psf() const { return psf_.spectrum(); }

 private:
  ImagingConfig icfg_;
  SensorGrid sensor_;
  AliasTable image_;
  SpectrumSampler psf_;
  Vec2 center_;
};

// Zero-mean normalized cross-correlation of two equally sized maps.
double normalized_cross_correlation(const Grid<double>& a, const Grid<double>& b);

}  // namespace biphoton

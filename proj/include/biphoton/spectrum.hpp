#pragma once

#include <complex>
#include <vector>

#include "biphoton/geometry.hpp"
#include "biphoton/grid.hpp"
#include "biphoton/screen.hpp"

namespace biphoton {

enum class SpectrumKind {
  centroid,    // |FT(e^{2i Phi})|^2 at 2q, focal position c + f q / k
  classical,   // |FT(e^{i Phi})|^2, single-photon focal spot
  difference,  // |FT(e^{i Phi_eff})|^2 over displacement f q / k
};

struct SpectrumOptions {
  int pupil_samples = 64;     // per axis across one aperture
  int oversample = 4;         // fine samples per half-pixel cell per axis
  double margin_pitch = 0.25; // window beyond the aperture half-width, in pitches
};

// Probability over focal-plane positions, tabulated on a fine grid and on the
// half-pixel cells that the fine grid subdivides. Both sum to one.
struct FocalSpectrum {
  Grid<double> fine;
  Vec2 fine_first;   // position of fine sample (0,0)
  double fine_step = 0.0;
  Grid<double> cells;
  int first_cell_x = 0;  // global half-cell index of cells(0,0)
  int first_cell_y = 0;
  double cell_step = 0.0;
  Vec2 cell_first;       // position of cells(0,0) center

  Vec2 fine_position(int i, int j) const { return fine_first + Vec2{i * fine_step, j * fine_step}; }
  Vec2 mean() const;
};

// Centroid (or classical) spectrum of one aperture on the global half-pixel
// grid of the sensor.
FocalSpectrum aperture_centroid_spectrum(const OpticalConfig& cfg, const PhaseScreen& screen, ApertureIndex a,
                                         const SpectrumOptions& opts = {},
                                         SpectrumKind kind = SpectrumKind::centroid);

// Displacement spectrum for anti-correlated pairs entering aperture a with
// mirror partner about symmetry_center: Phi_eff(r) = Phi(r) + Phi(2c - r).
// Positions are displacements D, centered on zero, on a half-pixel grid.
FocalSpectrum aperture_difference_spectrum(const OpticalConfig& cfg, const PhaseScreen& screen, ApertureIndex a,
                                           Vec2 symmetry_center, const SpectrumOptions& opts = {});

// Full width at half maximum along x through the fine-grid maximum, with
// linear interpolation between samples.
double spectrum_fwhm_x(const FocalSpectrum& s);

// |sum_{m,n} field(m,n) exp(-i beta (k/f) (u . r_mn))|^2 on a separable grid of
// output offsets, with r_mn the pupil sample offsets. Exposed for the imaging
// point-spread function.
Grid<double> matrix_fourier_power(const Grid<std::complex<double>>& field, double pupil_step,
                                  const std::vector<double>& out_x, const std::vector<double>& out_y,
                                  double scale);

}  // namespace biphoton

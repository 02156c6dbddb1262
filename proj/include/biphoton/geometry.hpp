#pragma once

#include <cmath>
#include <numbers>
#include <optional>

namespace biphoton {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

struct PixelCoord {
  int x = 0;
  int y = 0;
  friend bool operator==(PixelCoord, PixelCoord) = default;
};

struct ApertureIndex {
  int col = 0;
  int row = 0;
  friend bool operator==(ApertureIndex, ApertureIndex) = default;
};

// Geometry and sensor parameters, SI units. The microlens lattice is centered
// on the optical axis (0,0); roi_origin places the sensor ROI.
struct OpticalConfig {
  double wavelength = 808e-9;
  double f_sh = 14.6e-3;
  double aperture_pitch = 300e-6;
  double sensor_pixel = 13e-6;
  int roi_width = 165;
  int roi_height = 165;
  int aperture_cols = 7;
  int aperture_rows = 7;
  // Physical position of the center of ROI pixel (0,0). Unset means the ROI is
  // centered on the optical axis.
  std::optional<Vec2> roi_origin;
  double rescale_halfwidth = 1.05e-3;

  double wave_number() const { return 2.0 * std::numbers::pi / wavelength; }
  Vec2 origin() const;
  int aperture_count() const { return aperture_cols * aperture_rows; }

  // Throws DomainError on violated invariants.
  void validate() const;
};

// Center of a full-resolution pixel, or of a half-resolution cell when
// half_res is set (the half-resolution grid is 2x denser per axis and shares
// cell (0,0) with pixel (0,0)).
Vec2 pixel_center(const OpticalConfig& cfg, PixelCoord p, bool half_res);

// Fractional half-resolution cell coordinates of a physical position.
Vec2 to_half_cell(const OpticalConfig& cfg, Vec2 pos);
Vec2 from_half_cell(const OpticalConfig& cfg, Vec2 cell);

// Full-resolution pixel containing pos (nearest pixel center), if inside the ROI.
std::optional<PixelCoord> pixel_of(const OpticalConfig& cfg, Vec2 pos);

std::optional<ApertureIndex> aperture_of(const OpticalConfig& cfg, Vec2 pos);
Vec2 aperture_center(const OpticalConfig& cfg, ApertureIndex a);
bool valid_aperture(const OpticalConfig& cfg, ApertureIndex a);
int aperture_linear(const OpticalConfig& cfg, ApertureIndex a);

// Lower-left corner and size of the aperture-grid footprint.
Vec2 footprint_lower(const OpticalConfig& cfg);
Vec2 footprint_size(const OpticalConfig& cfg);

// Physical position -> modal domain. The modal domain is centered on the
// aperture grid and scaled by rescale_halfwidth.
Vec2 to_normalized(const OpticalConfig& cfg, Vec2 pos);
// Unchecked variant, usable outside the footprint.
Vec2 to_normalized_unchecked(const OpticalConfig& cfg, Vec2 pos);
Vec2 from_normalized(const OpticalConfig& cfg, Vec2 p);
// Gradient (rad/m) -> rad per normalized unit.
double gradient_to_normalized(const OpticalConfig& cfg, double kappa);

// Largest measurable gradient magnitude per axis: k * (pitch/2) / f_sh.
double dynamic_range(const OpticalConfig& cfg);
// Strict: |kx| < max and |ky| < max.
bool within_dynamic_range(const OpticalConfig& cfg, Vec2 kappa);

// Focal-plane displacement (m) produced by an average gradient (rad/m).
inline Vec2 displacement_for_gradient(const OpticalConfig& cfg, Vec2 kappa) {
  return (cfg.f_sh / cfg.wave_number()) * kappa;
}

}  // namespace biphoton

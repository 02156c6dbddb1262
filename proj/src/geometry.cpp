#include "biphoton/geometry.hpp"

#include <string>

#include "biphoton/errors.hpp"

namespace biphoton {

Vec2 OpticalConfig::origin() const {
  if (roi_origin) return *roi_origin;
  return {-0.5 * (roi_width - 1) * sensor_pixel, -0.5 * (roi_height - 1) * sensor_pixel};
}

void OpticalConfig::validate() const {
  if (!(wavelength > 0) || !(f_sh > 0) || !(aperture_pitch > 0) || !(sensor_pixel > 0))
    throw DomainError("wavelength, f_sh, aperture_pitch and sensor_pixel must be strictly positive");
  if (roi_width < 1 || roi_height < 1) throw DomainError("roi_pixels must be at least 1x1");
  if (roi_width > 65535 || roi_height > 65535) throw DomainError("roi_pixels exceed 65535");
  if (aperture_cols < 1 || aperture_rows < 1) throw DomainError("aperture_grid must be at least 1x1");
  if (!(rescale_halfwidth > 0)) throw DomainError("rescale_halfwidth must be strictly positive");

  // The aperture footprint must lie inside the ROI's pixel area.
  const Vec2 o = origin();
  const double roi_lo_x = o.x - 0.5 * sensor_pixel;
  const double roi_lo_y = o.y - 0.5 * sensor_pixel;
  const double roi_hi_x = roi_lo_x + roi_width * sensor_pixel;
  const double roi_hi_y = roi_lo_y + roi_height * sensor_pixel;
  const Vec2 lo = footprint_lower(*this);
  const Vec2 size = footprint_size(*this);
  const double tol = 1e-9 * sensor_pixel;
  if (lo.x < roi_lo_x - tol || lo.y < roi_lo_y - tol || lo.x + size.x > roi_hi_x + tol ||
      lo.y + size.y > roi_hi_y + tol)
    throw DomainError("aperture grid does not fit inside the ROI");
}

Vec2 pixel_center(const OpticalConfig& cfg, PixelCoord p, bool half_res) {
  const int scale = half_res ? 2 : 1;
  if (p.x < 0 || p.y < 0 || p.x >= scale * cfg.roi_width || p.y >= scale * cfg.roi_height)
    throw DomainError("pixel (" + std::to_string(p.x) + "," + std::to_string(p.y) + ") outside the ROI");
  const double step = cfg.sensor_pixel / scale;
  const Vec2 o = cfg.origin();
  return {o.x + p.x * step, o.y + p.y * step};
}

Vec2 to_half_cell(const OpticalConfig& cfg, Vec2 pos) {
  const Vec2 o = cfg.origin();
  const double step = 0.5 * cfg.sensor_pixel;
  return {(pos.x - o.x) / step, (pos.y - o.y) / step};
}

Vec2 from_half_cell(const OpticalConfig& cfg, Vec2 cell) {
  const Vec2 o = cfg.origin();
  const double step = 0.5 * cfg.sensor_pixel;
  return {o.x + cell.x * step, o.y + cell.y * step};
}

std::optional<PixelCoord> pixel_of(const OpticalConfig& cfg, Vec2 pos) {
  const Vec2 o = cfg.origin();
  const double fx = std::floor((pos.x - o.x) / cfg.sensor_pixel + 0.5);
  const double fy = std::floor((pos.y - o.y) / cfg.sensor_pixel + 0.5);
  if (fx < 0 || fy < 0 || fx >= cfg.roi_width || fy >= cfg.roi_height) return std::nullopt;
  return PixelCoord{static_cast<int>(fx), static_cast<int>(fy)};
}

Vec2 footprint_size(const OpticalConfig& cfg) {
  return {cfg.aperture_cols * cfg.aperture_pitch, cfg.aperture_rows * cfg.aperture_pitch};
}

Vec2 footprint_lower(const OpticalConfig& cfg) { return -0.5 * footprint_size(cfg); }

bool valid_aperture(const OpticalConfig& cfg, ApertureIndex a) {
  return a.col >= 0 && a.row >= 0 && a.col < cfg.aperture_cols && a.row < cfg.aperture_rows;
}

int aperture_linear(const OpticalConfig& cfg, ApertureIndex a) { return a.row * cfg.aperture_cols + a.col; }

namespace {

// Half-open cell index along one axis: edge(c) <= v < edge(c+1).
std::optional<int> cell_index(double v, double lower, double pitch, int count) {
  auto edge = [&](int c) { return lower + c * pitch; };
  const double t = std::floor((v - lower) / pitch);
  if (!(t > -2.0) || !(t < count + 1.0)) return std::nullopt;
  int c = static_cast<int>(t);
  if (v >= edge(c + 1)) ++c;
  if (v < edge(c)) --c;
  if (c < 0 || c >= count) return std::nullopt;
  return c;
}

}  // namespace

std::optional<ApertureIndex> aperture_of(const OpticalConfig& cfg, Vec2 pos) {
  const Vec2 lo = footprint_lower(cfg);
  const auto c = cell_index(pos.x, lo.x, cfg.aperture_pitch, cfg.aperture_cols);
  const auto r = cell_index(pos.y, lo.y, cfg.aperture_pitch, cfg.aperture_rows);
  if (!c || !r) return std::nullopt;
  return ApertureIndex{*c, *r};
}

Vec2 aperture_center(const OpticalConfig& cfg, ApertureIndex a) {
  if (!valid_aperture(cfg, a))
    throw DomainError("aperture (" + std::to_string(a.col) + "," + std::to_string(a.row) + ") outside the grid");
  const Vec2 lo = footprint_lower(cfg);
  return {lo.x + (a.col + 0.5) * cfg.aperture_pitch, lo.y + (a.row + 0.5) * cfg.aperture_pitch};
}

Vec2 to_normalized_unchecked(const OpticalConfig& cfg, Vec2 pos) {
  return {pos.x / cfg.rescale_halfwidth, pos.y / cfg.rescale_halfwidth};
}

Vec2 to_normalized(const OpticalConfig& cfg, Vec2 pos) {
  const Vec2 half = 0.5 * footprint_size(cfg);
  const double tol = 1e-12 * (half.x + half.y);
  if (std::abs(pos.x) > half.x + tol || std::abs(pos.y) > half.y + tol)
    throw DomainError("position outside the aperture-grid footprint");
  return to_normalized_unchecked(cfg, pos);
}

Vec2 from_normalized(const OpticalConfig& cfg, Vec2 p) { return cfg.rescale_halfwidth * p; }

double gradient_to_normalized(const OpticalConfig& cfg, double kappa) { return kappa * cfg.rescale_halfwidth; }

double dynamic_range(const OpticalConfig& cfg) {
  return cfg.wave_number() * (0.5 * cfg.aperture_pitch) / cfg.f_sh;
}

bool within_dynamic_range(const OpticalConfig& cfg, Vec2 kappa) {
  // Relative slack so that a displacement of exactly half a pitch, computed
  // through different rounding paths, still counts as on the boundary.
  const double limit = dynamic_range(cfg) * (1.0 - 1e-12);
  return std::abs(kappa.x) < limit && std::abs(kappa.y) < limit;
}

}  // namespace biphoton

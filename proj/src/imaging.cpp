#include "biphoton/imaging.hpp"

#include <cmath>

#include "biphoton/errors.hpp"

namespace biphoton {

Vec2 ImagingConfig::pixel_position(double x, double y) const {
  const Vec2 c = center_px();
  return {(x - c.x) * pixel, (y - c.y) * pixel};
}

SensorGrid ImagingConfig::sensor() const { return {width, height, pixel, pixel_position(0, 0)}; }

void ImagingConfig::validate() const {
  if (width < 2 || height < 2 || width > 65535 || height > 65535) throw DomainError("imaging ROI out of range");
  if (!(pixel > 0) || !(wavelength > 0) || !(focal > 0) || !(pupil_width > 0) || !(beam_fwhm > 0))
    throw DomainError("imaging lengths must be strictly positive");
  if (pupil_samples < 2 || psf_halfwidth < 1) throw DomainError("invalid imaging sampling parameters");
}

DetectorModel imaging_detector() {
  DetectorModel d;
  d.pairs_per_frame = 600.0;
  return d;
}

Grid<double> bar_mask(const ImagingConfig& icfg, int bar_px) {
  if (bar_px < 1) throw DomainError("bar width must be at least one pixel");
  icfg.validate();
  Grid<double> mask(icfg.width, icfg.height, 1.0);
  const Vec2 c = icfg.center_px();
  for (int y = 0; y < icfg.height; ++y)
    for (int x = 0; x < icfg.width; ++x) {
      if (x > c.x) continue;
      const int phase = y < c.y ? x : y;
      mask(x, y) = (phase / bar_px) % 2 == 0 ? 1.0 : 0.0;
    }
  return mask;
}

Grid<double> effective_image(const ImagingConfig& icfg, const Grid<double>& mask, bool with_envelope) {
  if (mask.width() != icfg.width || mask.height() != icfg.height)
    throw DomainError("object mask does not match the imaging ROI");
  const PixelCoord d = icfg.doubled_center();
  const double sigma = icfg.beam_fwhm / 2.3548200450309493;
  Grid<double> out(icfg.width, icfg.height);
  for (int y = 0; y < icfg.height; ++y)
    for (int x = 0; x < icfg.width; ++x) {
      const Vec2 u = icfg.pixel_position(x, y);
      const double env = with_envelope ? std::exp(-0.5 * (u.x * u.x + u.y * u.y) / (sigma * sigma)) : 1.0;
      out(x, y) = env * mask(x, y) * mask(d.x - x, d.y - y);
    }
  return out;
}

FocalSpectrum imaging_psf(const ImagingConfig& icfg, const OpticalConfig& screen_frame, const PhaseScreen& screen,
                          int oversample) {
  icfg.validate();
  const int m = icfg.pupil_samples;
  const double step = icfg.pupil_width / m;
  const double half = 0.5 * icfg.pupil_width;
  Grid<std::complex<double>> field(m, m);
  for (int y = 0; y < m; ++y)
    for (int x = 0; x < m; ++x) {
      const Vec2 normalized{((x + 0.5) * step - half) / half, ((y + 0.5) * step - half) / half};
      const Vec2 pos = from_normalized(screen_frame, normalized);
      if (!screen.covers(pos)) throw DomainError("phase screen does not cover the imaging pupil");
      field(x, y) = std::polar(1.0, screen.value(screen_frame, pos));
    }

  const double h = 0.5 * icfg.pixel;
  const int cells = 2 * icfg.psf_halfwidth;
  FocalSpectrum s;
  s.cell_step = h;
  s.first_cell_x = s.first_cell_y = -cells;
  s.cell_first = {-cells * h, -cells * h};
  s.fine_step = h / oversample;
  s.fine_first = s.cell_first + Vec2{(0.5 / oversample - 0.5) * h, (0.5 / oversample - 0.5) * h};
  const int n = (2 * cells + 1) * oversample;
  std::vector<double> u(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) u[i] = s.fine_first.x + i * s.fine_step;
  s.fine = matrix_fourier_power(field, step, u, u, icfg.wave_number() / icfg.focal);
  double total = 0.0;
  for (double v : s.fine.values()) total += v;
  for (auto& v : s.fine.values()) v /= total;
  s.cells = Grid<double>(2 * cells + 1, 2 * cells + 1, 0.0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) s.cells(i / oversample, j / oversample) += s.fine(i, j);
  return s;
}

namespace {

AliasTable image_table(const ImagingConfig& icfg, const Grid<double>& mask) {
  const Grid<double> image = effective_image(icfg, mask, true);
  return AliasTable(image.values());
}

}  // namespace

ImagingSource::ImagingSource(const ImagingConfig& icfg, const Grid<double>& mask, const OpticalConfig& screen_frame,
                             const PhaseScreen& screen)
    : icfg_(icfg), sensor_(icfg.sensor()), image_(image_table(icfg, mask)),
      psf_(imaging_psf(icfg, screen_frame, screen)), center_(icfg.pixel_position(icfg.center_px().x, icfg.center_px().y)) {}

PhotonPair ImagingSource::sample(Rng& rng) const {
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  const auto idx = image_.sample(rng);
  const double x = static_cast<double>(idx % static_cast<std::size_t>(icfg_.width)) + jitter(rng);
  const double y = static_cast<double>(idx / static_cast<std::size_t>(icfg_.width)) + jitter(rng);
  const Vec2 u1 = icfg_.pixel_position(x, y);
  const Vec2 u2 = 2.0 * center_ - u1;
  return {u1 + psf_.sample(rng), u2 + psf_.sample(rng)};
}

double normalized_cross_correlation(const Grid<double>& a, const Grid<double>& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw DomainError("maps differ in size");
  const auto va = a.values(), vb = b.values();
  const double n = static_cast<double>(va.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) ma += va[i], mb += vb[i];
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double da = va[i] - ma, db = vb[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace biphoton

#include "biphoton/spectrum.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "biphoton/errors.hpp"

namespace biphoton {

namespace {

using cd = std::complex<double>;

std::vector<double> pupil_offsets(int m, double step) {
  std::vector<double> r(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) r[i] = (i + 0.5 - 0.5 * m) * step;
  return r;
}

Eigen::MatrixXcd kernel(const std::vector<double>& out, const std::vector<double>& r, double scale) {
  Eigen::MatrixXcd K(static_cast<Eigen::Index>(out.size()), static_cast<Eigen::Index>(r.size()));
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < r.size(); ++j) K(i, j) = std::polar(1.0, -scale * out[i] * r[j]);
  return K;
}

struct CellAxis {
  int first = 0;
  int count = 0;
};

// Cells of width h centered at origin + i*h that cover [lo, hi].
CellAxis cover(double lo, double hi, double origin, double h) {
  const int a = static_cast<int>(std::floor((lo - origin) / h + 0.5));
  const int b = static_cast<int>(std::ceil((hi - origin) / h - 0.5));
  return {a, b - a + 1};
}

FocalSpectrum tabulate(const Grid<cd>& field, double pupil_step, Vec2 reference, Vec2 cell_origin, double h,
                       CellAxis ax, CellAxis ay, int os, double scale) {
  FocalSpectrum s;
  s.cell_step = h;
  s.first_cell_x = ax.first;
  s.first_cell_y = ay.first;
  s.cell_first = cell_origin + Vec2{ax.first * h, ay.first * h};
  s.fine_step = h / os;
  s.fine_first = s.cell_first + Vec2{(0.5 / os - 0.5) * h, (0.5 / os - 0.5) * h};

  std::vector<double> ux(static_cast<std::size_t>(ax.count * os)), uy(static_cast<std::size_t>(ay.count * os));
  for (std::size_t i = 0; i < ux.size(); ++i) ux[i] = s.fine_first.x + i * s.fine_step - reference.x;
  for (std::size_t j = 0; j < uy.size(); ++j) uy[j] = s.fine_first.y + j * s.fine_step - reference.y;

  s.fine = matrix_fourier_power(field, pupil_step, ux, uy, scale);
  double total = 0.0;
  for (double v : s.fine.values()) total += v;
  if (!(total > 0)) throw NumericalError("spectrum has no power inside its window");
  for (auto& v : s.fine.values()) v /= total;

  s.cells = Grid<double>(ax.count, ay.count, 0.0);
  for (int j = 0; j < s.fine.height(); ++j)
    for (int i = 0; i < s.fine.width(); ++i) s.cells(i / os, j / os) += s.fine(i, j);
  return s;
}

void check_options(const SpectrumOptions& opts) {
  if (opts.pupil_samples < 2 || opts.oversample < 1 || !(opts.margin_pitch >= 0))
    throw DomainError("invalid spectrum options");
}

}  // namespace

Grid<double> matrix_fourier_power(const Grid<cd>& field, double pupil_step, const std::vector<double>& out_x,
                                  const std::vector<double>& out_y, double scale) {
  const int m = field.width(), n = field.height();
  Eigen::MatrixXcd E(n, m);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < m; ++x) E(y, x) = field(x, y);
  const Eigen::MatrixXcd Kx = kernel(out_x, pupil_offsets(m, pupil_step), scale);
  const Eigen::MatrixXcd Ky = kernel(out_y, pupil_offsets(n, pupil_step), scale);
  const Eigen::MatrixXcd F = Ky * (E * Kx.transpose());
  Grid<double> power(static_cast<int>(out_x.size()), static_cast<int>(out_y.size()));
  for (int y = 0; y < power.height(); ++y)
    for (int x = 0; x < power.width(); ++x) power(x, y) = std::norm(F(y, x));
  return power;
}

Vec2 FocalSpectrum::mean() const {
  Vec2 m;
  for (int j = 0; j < fine.height(); ++j)
    for (int i = 0; i < fine.width(); ++i) m = m + fine(i, j) * fine_position(i, j);
  return m;
}

FocalSpectrum aperture_centroid_spectrum(const OpticalConfig& cfg, const PhaseScreen& screen, ApertureIndex a,
                                         const SpectrumOptions& opts, SpectrumKind kind) {
  check_options(opts);
  if (kind == SpectrumKind::difference) throw DomainError("use aperture_difference_spectrum for the difference kind");
  const Vec2 c = aperture_center(cfg, a);
  const int m = opts.pupil_samples;
  const double step = cfg.aperture_pitch / m;
  const auto r = pupil_offsets(m, step);
  const double multiplier = kind == SpectrumKind::centroid ? 2.0 : 1.0;

  Grid<cd> field(m, m);
  for (int y = 0; y < m; ++y)
    for (int x = 0; x < m; ++x) {
      const Vec2 pos = c + Vec2{r[x], r[y]};
      if (!screen.covers(pos)) throw DomainError("phase screen is undefined over the aperture");
      field(x, y) = std::polar(1.0, multiplier * screen.value(cfg, pos));
    }

  const double h = 0.5 * cfg.sensor_pixel;
  const double reach = (0.5 + opts.margin_pitch) * cfg.aperture_pitch;
  const Vec2 o = cfg.origin();
  const CellAxis ax = cover(c.x - reach, c.x + reach, o.x, h);
  const CellAxis ay = cover(c.y - reach, c.y + reach, o.y, h);
  const double scale = multiplier * cfg.wave_number() / cfg.f_sh;
  return tabulate(field, step, c, o, h, ax, ay, opts.oversample, scale);
}

FocalSpectrum aperture_difference_spectrum(const OpticalConfig& cfg, const PhaseScreen& screen, ApertureIndex a,
                                           Vec2 symmetry_center, const SpectrumOptions& opts) {
  check_options(opts);
  const Vec2 c = aperture_center(cfg, a);
  const int m = opts.pupil_samples;
  const double step = cfg.aperture_pitch / m;
  const auto r = pupil_offsets(m, step);

  Grid<cd> field(m, m);
  for (int y = 0; y < m; ++y)
    for (int x = 0; x < m; ++x) {
      const Vec2 pos = c + Vec2{r[x], r[y]};
      const Vec2 mirror = 2.0 * symmetry_center - pos;
      if (!screen.covers(pos) || !screen.covers(mirror)) throw DomainError("phase screen is undefined over the aperture pair");
      field(x, y) = std::polar(1.0, screen.value(cfg, pos) + screen.value(cfg, mirror));
    }

  const double h = 0.5 * cfg.sensor_pixel;
  const double reach = (1.0 + opts.margin_pitch) * cfg.aperture_pitch;
  const CellAxis axis = cover(-reach, reach, 0.0, h);
  return tabulate(field, step, Vec2{}, Vec2{}, h, axis, axis, opts.oversample, cfg.wave_number() / cfg.f_sh);
}

double spectrum_fwhm_x(const FocalSpectrum& s) {
  int bi = 0, bj = 0;
  double best = -1.0;
  for (int j = 0; j < s.fine.height(); ++j)
    for (int i = 0; i < s.fine.width(); ++i)
      if (s.fine(i, j) > best) {
        best = s.fine(i, j);
        bi = i;
        bj = j;
      }
  const double half = 0.5 * best;
  auto crossing = [&](int dir) {
    int i = bi;
    while (i + dir >= 0 && i + dir < s.fine.width() && s.fine(i + dir, bj) >= half) i += dir;
    if (i + dir < 0 || i + dir >= s.fine.width()) throw NumericalError("half maximum not reached inside the window");
    const double a = s.fine(i, bj), b = s.fine(i + dir, bj);
    return i + dir * (a - half) / (a - b);
  };
  return (crossing(1) - crossing(-1)) * s.fine_step;
}

}  // namespace biphoton

#include <doctest.h>

#include <cmath>
#include <random>

#include "biphoton/errors.hpp"
#include "biphoton/spectrum.hpp"

using namespace biphoton;

namespace {

double total(const Grid<double>& g) {
  double s = 0.0;
  for (double v : g.values()) s += v;
  return s;
}

Vec2 argmax_position(const FocalSpectrum& s) {
  int bi = 0, bj = 0;
  for (int j = 0; j < s.fine.height(); ++j)
    for (int i = 0; i < s.fine.width(); ++i)
      if (s.fine(i, j) > s.fine(bi, bj)) bi = i, bj = j;
  return s.fine_position(bi, bj);
}

PhaseScreen tilt_screen(const OpticalConfig& cfg, Vec2 kappa) {
  legendre::LegendreCoeffs c;
  c.set(1, 0, kappa.x * cfg.rescale_halfwidth);
  c.set(0, 1, kappa.y * cfg.rescale_halfwidth);
  return PhaseScreen(c);
}

}  // namespace

TEST_CASE("spectra are normalized probability grids") {
  const OpticalConfig cfg;
  const auto s = aperture_centroid_spectrum(cfg, PhaseScreen{}, {2, 5});
  CHECK(total(s.fine) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(total(s.cells) == doctest::Approx(1.0).epsilon(1e-12));
  for (double v : s.fine.values()) CHECK(v >= 0.0);
  CHECK(s.cell_step == doctest::Approx(6.5e-6));
  CHECK(s.fine_step == doctest::Approx(6.5e-6 / 4));
  // Each cell is the sum of its fine samples.
  const int os = s.fine.width() / s.cells.width();
  double c00 = 0.0;
  for (int j = 0; j < os; ++j)
    for (int i = 0; i < os; ++i) c00 += s.fine(i, j);
  CHECK(s.cells(0, 0) == doctest::Approx(c00).epsilon(1e-12));
}

TEST_CASE("flat phase: centered symmetric peak, half the classical width") {
  const OpticalConfig cfg;
  const ApertureIndex a{3, 3};
  const auto s = aperture_centroid_spectrum(cfg, PhaseScreen{}, a);
  const Vec2 c = aperture_center(cfg, a);
  const Vec2 m = s.mean();
  CHECK(std::abs(m.x - c.x) < 1e-9);
  CHECK(std::abs(m.y - c.y) < 1e-9);
  const Vec2 peak = argmax_position(s);
  CHECK(std::abs(peak.x - c.x) <= 0.5 * s.fine_step + 1e-12);
  const int w = s.fine.width(), h = s.fine.height();
  for (int j = 0; j < h; j += 7)
    for (int i = 0; i < w; i += 5) CHECK(s.fine(i, j) == doctest::Approx(s.fine(w - 1 - i, h - 1 - j)).epsilon(1e-9).scale(1e-12));

  const auto classical = aperture_centroid_spectrum(cfg, PhaseScreen{}, a, {}, SpectrumKind::classical);
  const double fc = spectrum_fwhm_x(s), fk = spectrum_fwhm_x(classical);
  // Frozen outputs of the default tabulation.
  CHECK(fc == doctest::Approx(17.49e-6).epsilon(0.005));
  CHECK(fk == doctest::Approx(34.88e-6).epsilon(0.005));
  CHECK(fk / fc == doctest::Approx(2.0).epsilon(0.01));
}

TEST_CASE("tilt displaces the peak by f*q0/k") {
  const OpticalConfig cfg;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  const double dr = dynamic_range(cfg);
  for (int t = 0; t < 5; ++t) {
    const Vec2 q{u(rng) * dr, u(rng) * dr};
    const ApertureIndex a{static_cast<int>(rng() % 7), static_cast<int>(rng() % 7)};
    const auto s = aperture_centroid_spectrum(cfg, tilt_screen(cfg, q), a);
    const Vec2 expected = aperture_center(cfg, a) + displacement_for_gradient(cfg, q);
    const Vec2 peak = argmax_position(s);
    CHECK(std::abs(peak.x - expected.x) <= 6.5e-6);
    CHECK(std::abs(peak.y - expected.y) <= 6.5e-6);
  }
}

TEST_CASE("difference spectrum: odd phase cancels, even phase doubles") {
  const OpticalConfig cfg;
  const Vec2 center{0.0, 0.0};
  const ApertureIndex a{1, 3};

  const auto odd = aperture_difference_spectrum(cfg, tilt_screen(cfg, {30000.0, -20000.0}), a, center);
  const Vec2 po = argmax_position(odd);
  CHECK(std::abs(po.x) <= 6.5e-6);
  CHECK(std::abs(po.y) <= 6.5e-6);
  CHECK(total(odd.fine) == doctest::Approx(1.0).epsilon(1e-12));

  // Even screen: x^2 term; local gradient at aperture a is known.
  legendre::LegendreCoeffs even;
  even.set(2, 0, 1.5);
  const PhaseScreen screen(even);
  const Vec2 ca = aperture_center(cfg, a);
  const double xn = to_normalized(cfg, ca).x;
  const double q0 = 1.5 * 3.0 * xn / cfg.rescale_halfwidth;  // d/dx of 1.5*(3x^2-1)/2
  const auto ev = aperture_difference_spectrum(cfg, screen, a, center);
  const Vec2 pe = argmax_position(ev);
  CHECK(std::abs(pe.x - 2.0 * cfg.f_sh * q0 / cfg.wave_number()) <= 6.5e-6);
  CHECK(std::abs(pe.y) <= 6.5e-6);
}

TEST_CASE("spectrum rejects uncovered apertures") {
  const OpticalConfig cfg;
  PhaseRasterPart tiny;
  tiny.phase = Grid<double>(2, 2, 0.0);
  tiny.lower = {0, 0};
  tiny.step = {1e-5, 1e-5};
  CHECK_THROWS_AS(aperture_centroid_spectrum(cfg, PhaseScreen(std::nullopt, tiny), {0, 0}), DomainError);
  CHECK_THROWS_AS(aperture_centroid_spectrum(cfg, PhaseScreen{}, {0, 0}, {}, SpectrumKind::difference), DomainError);
}

#include <doctest.h>

#include <cmath>

#include "biphoton/errors.hpp"
#include "biphoton/screen.hpp"

using namespace biphoton;

TEST_CASE("named presets") {
  const OpticalConfig cfg;
  const auto saddle = preset_screen(cfg, "saddle");
  REQUIRE(saddle.modal().has_value());
  CHECK(saddle.modal()->get(2, 0) == 10.0);
  CHECK(saddle.modal()->get(0, 2) == -10.0);
  int nonzero = 0;
  for (double v : saddle.modal()->values()) nonzero += v != 0.0;
  CHECK(nonzero == 2);

  const auto eq7 = eq7_coeffs();
  CHECK(eq7.get(2, 0) == 8.0);
  CHECK(eq7.get(1, 1) == 6.0);
  CHECK(eq7.get(0, 2) == -7.0);
  CHECK(eq7.get(3, 0) == 4.0);
  CHECK(eq7.get(2, 1) == -5.0);
  CHECK(eq7.get(1, 2) == -4.0);
  CHECK(eq7.get(0, 3) == 3.0);
  nonzero = 0;
  for (double v : eq7.values()) nonzero += v != 0.0;
  CHECK(nonzero == 7);

  const auto none = preset_screen(cfg, "none");
  CHECK(none.value(cfg, {1e-4, 2e-4}) == 0.0);
  CHECK_THROWS_AS(preset_screen(cfg, "sadle"), DomainError);
  CHECK_THROWS_AS(preset_screen(cfg, "film(1.5, 600um)"), DomainError);
}

TEST_CASE("modal screen values follow the normalized mapping") {
  const OpticalConfig cfg;
  const auto s = preset_screen(cfg, "saddle");
  // Footprint corner maps to (1,1): 10*(1 - 1) = 0; edge midpoint (1,0): 15.
  CHECK(s.value(cfg, {1.05e-3, 0.0}) == doctest::Approx(15.0));
  CHECK(s.value(cfg, {1.05e-3, 1.05e-3}) == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
  const auto raster = s.rasterize(cfg, 120);
  CHECK(raster == legendre::rasterize(saddle_coeffs(), 120));
}

TEST_CASE("tilt gradient is the coefficient over the rescale length") {
  const OpticalConfig cfg;
  legendre::LegendreCoeffs tilt;
  tilt.set(1, 0, 21.0);
  const PhaseScreen s(tilt);
  CHECK(max_aperture_gradient(cfg, s) == doctest::Approx(21.0 / 1.05e-3).epsilon(1e-12));
}

TEST_CASE("film screen statistics") {
  const OpticalConfig cfg;
  FilmParams p;
  p.rms = 1.5;
  p.corr_len = 600e-6;
  p.seed = 11;
  const auto film = make_film(cfg, p);
  const PhaseScreen screen(std::nullopt, film);

  // Mean and RMS over the footprint, on the film's own sample lattice.
  double sum = 0.0, sum2 = 0.0;
  long n = 0;
  const Vec2 lo = footprint_lower(cfg), hi = lo + footprint_size(cfg);
  for (int j = 0; j < film.phase.height(); ++j)
    for (int i = 0; i < film.phase.width(); ++i) {
      const Vec2 pos = film.lower + Vec2{i * film.step.x, j * film.step.y};
      if (pos.x < lo.x || pos.x > hi.x || pos.y < lo.y || pos.y > hi.y) continue;
      sum += film.phase(i, j);
      sum2 += film.phase(i, j) * film.phase(i, j);
      ++n;
    }
  CHECK(std::abs(sum / n) < 1e-9);
  CHECK(std::sqrt(sum2 / n) == doctest::Approx(1.5).epsilon(1e-9));

  // Covers the whole footprint; undefined far outside.
  CHECK(screen.covers(lo));
  CHECK(screen.covers(hi));
  CHECK_FALSE(screen.covers(hi + Vec2{1e-3, 0}));
  CHECK_THROWS_AS(screen.value(cfg, hi + Vec2{1e-3, 0}), DomainError);

  // Same seed, same film; different seed, different film.
  CHECK(make_film(cfg, p).phase == film.phase);
  p.seed = 12;
  CHECK_FALSE(make_film(cfg, p).phase == film.phase);
}

TEST_CASE("film autocorrelation falls to 1/e near the correlation length") {
  OpticalConfig cfg;
  cfg.aperture_cols = cfg.aperture_rows = 21;  // large footprint for a stable estimate
  cfg.roi_width = cfg.roi_height = 500;
  cfg.rescale_halfwidth = 3.15e-3;
  FilmParams p;
  p.corr_len = 600e-6;
  p.seed = 5;
  const auto film = make_film(cfg, p);
  const int lag = static_cast<int>(std::lround(p.corr_len / film.step.x));
  double c0 = 0.0, cl = 0.0;
  long n0 = 0, nl = 0;
  for (int j = 0; j < film.phase.height(); ++j)
    for (int i = 0; i < film.phase.width(); ++i) {
      c0 += film.phase(i, j) * film.phase(i, j);
      ++n0;
      if (i + lag < film.phase.width()) {
        cl += film.phase(i, j) * film.phase(i + lag, j);
        ++nl;
      }
    }
  const double rho = (cl / nl) / (c0 / n0);
  CHECK(rho == doctest::Approx(std::exp(-1.0)).epsilon(0.25));
}

TEST_CASE("adding a modal correction") {
  const OpticalConfig cfg;
  const auto s = preset_screen(cfg, "saddle");
  const auto corrected = s.plus(-saddle_coeffs());
  const auto residual = corrected.rasterize(cfg, 16);
  for (double v : residual.values()) CHECK(std::abs(v) < 1e-12);
  const auto film = preset_screen(cfg, "film(1.5, 600um, 3)");
  legendre::LegendreCoeffs tilt;
  tilt.set(1, 0, 1.0);
  const auto both = film.plus(tilt);
  REQUIRE(both.modal().has_value());
  REQUIRE(both.raster().has_value());
  const Vec2 p{0.2e-3, 0.1e-3};
  CHECK(both.value(cfg, p) == doctest::Approx(film.value(cfg, p) + to_normalized(cfg, p).x));
}

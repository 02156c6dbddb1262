#include "biphoton/screen.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <regex>

#include "biphoton/config_file.hpp"
#include "biphoton/errors.hpp"

namespace biphoton {

double PhaseRasterPart::sample(Vec2 pos) const {
  const double fx = (pos.x - lower.x) / step.x;
  const double fy = (pos.y - lower.y) / step.y;
  const int w = phase.width(), h = phase.height();
  constexpr double slack = 1e-9;
  if (fx < -slack || fy < -slack || fx > w - 1 + slack || fy > h - 1 + slack)
    throw DomainError("phase raster does not cover the requested position");
  const int ix = std::clamp(static_cast<int>(std::floor(fx)), 0, w - 2);
  const int iy = std::clamp(static_cast<int>(std::floor(fy)), 0, h - 2);
  const double tx = std::clamp(fx - ix, 0.0, 1.0);
  const double ty = std::clamp(fy - iy, 0.0, 1.0);
  const double a = phase(ix, iy) * (1 - tx) + phase(ix + 1, iy) * tx;
  const double b = phase(ix, iy + 1) * (1 - tx) + phase(ix + 1, iy + 1) * tx;
  return a * (1 - ty) + b * ty;
}

PhaseScreen::PhaseScreen(std::optional<legendre::LegendreCoeffs> modal, std::optional<PhaseRasterPart> raster)
    : modal_(std::move(modal)), raster_(std::move(raster)) {
  if (!modal_ && !raster_) throw DomainError("a phase screen needs a modal or a raster part");
  if (raster_ && (raster_->phase.width() < 2 || raster_->phase.height() < 2))
    throw DomainError("phase raster must be at least 2x2");
}

bool PhaseScreen::covers(Vec2 pos) const {
  if (!raster_) return true;
  const Vec2 lo = raster_->lower, hi = raster_->upper();
  return pos.x >= lo.x && pos.y >= lo.y && pos.x <= hi.x && pos.y <= hi.y;
}

double PhaseScreen::value(const OpticalConfig& cfg, Vec2 pos) const {
  double v = 0.0;
  if (modal_) v += legendre::evaluate(*modal_, to_normalized_unchecked(cfg, pos));
  if (raster_) v += raster_->sample(pos);
  return v;
}

PhaseScreen PhaseScreen::plus(const legendre::LegendreCoeffs& extra) const {
  legendre::LegendreCoeffs modal = modal_ ? *modal_ : legendre::LegendreCoeffs(extra.max_degree());
  modal += extra;
  return PhaseScreen(std::move(modal), raster_);
}

legendre::PhaseRaster PhaseScreen::rasterize(const OpticalConfig& cfg, int n) const {
  legendre::PhaseRaster out = modal_ ? legendre::rasterize(*modal_, n) : legendre::PhaseRaster(n, n, 0.0);
  if (raster_) {
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const Vec2 p{legendre::raster_coordinate(x, n), legendre::raster_coordinate(y, n)};
        out(x, y) += raster_->sample(from_normalized(cfg, p));
      }
  }
  return out;
}

legendre::LegendreCoeffs saddle_coeffs() {
  legendre::LegendreCoeffs c;
  c.set(2, 0, 10.0);
  c.set(0, 2, -10.0);
  return c;
}

legendre::LegendreCoeffs eq7_coeffs() {
  legendre::LegendreCoeffs c;
  c.set(2, 0, 8.0);
  c.set(1, 1, 6.0);
  c.set(0, 2, -7.0);
  c.set(3, 0, 4.0);
  c.set(2, 1, -5.0);
  c.set(1, 2, -4.0);
  c.set(0, 3, 3.0);
  return c;
}

namespace {

std::vector<double> gaussian_taps(double sigma) {
  const int half = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> taps(2 * half + 1);
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) sum += taps[i + half] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& t : taps) t /= sum;
  return taps;
}

}  // namespace

PhaseRasterPart make_film(const OpticalConfig& cfg, const FilmParams& params) {
  if (!(params.rms >= 0) || !(params.corr_len > 0) || !(params.samples_per_pitch > 0))
    throw DomainError("film needs rms >= 0, corr_len > 0 and samples_per_pitch > 0");
  const double step = cfg.aperture_pitch / params.samples_per_pitch;
  // White noise filtered by a Gaussian of width sigma has autocorrelation
  // exp(-r^2 / (4 sigma^2)), so sigma = corr_len / 2.
  const double sigma = 0.5 * params.corr_len / step;
  const auto taps = gaussian_taps(sigma);
  const int half = static_cast<int>(taps.size() / 2);

  const Vec2 fp_lo = footprint_lower(cfg);
  const Vec2 fp_size = footprint_size(cfg);
  const int margin = 2;
  const int nx = static_cast<int>(std::ceil(fp_size.x / step)) + 1 + 2 * margin;
  const int ny = static_cast<int>(std::ceil(fp_size.y / step)) + 1 + 2 * margin;
  const int px = nx + 2 * half, py = ny + 2 * half;

  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> normal;
  Grid<double> noise(px, py);
  for (auto& v : noise.values()) v = normal(rng);

  Grid<double> rows(nx, py);
  for (int y = 0; y < py; ++y)
    for (int x = 0; x < nx; ++x) {
      double s = 0.0;
      for (int t = 0; t < static_cast<int>(taps.size()); ++t) s += taps[t] * noise(x + t, y);
      rows(x, y) = s;
    }
  PhaseRasterPart film{Grid<double>(nx, ny), fp_lo - Vec2{margin * step, margin * step}, {step, step}};
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      double s = 0.0;
      for (int t = 0; t < static_cast<int>(taps.size()); ++t) s += taps[t] * rows(x, y + t);
      film.phase(x, y) = s;
    }

  // Zero mean and target RMS over the samples inside the footprint.
  double sum = 0.0, sum2 = 0.0;
  long count = 0;
  for (int y = margin; y < ny - margin; ++y)
    for (int x = margin; x < nx - margin; ++x) {
      sum += film.phase(x, y);
      sum2 += film.phase(x, y) * film.phase(x, y);
      ++count;
    }
  const double mean = sum / count;
  const double sd = std::sqrt(std::max(0.0, sum2 / count - mean * mean));
  const double scale = sd > 0 ? params.rms / sd : 0.0;
  for (auto& v : film.phase.values()) v = (v - mean) * scale;
  return film;
}

PhaseScreen preset_screen(const OpticalConfig& cfg, const std::string& spec) {
  if (spec == "none" || spec == "zero") return PhaseScreen{};
  if (spec == "saddle") return PhaseScreen(saddle_coeffs());
  if (spec == "eq7") return PhaseScreen(eq7_coeffs());
  static const std::regex film_re(R"(film\(\s*([^,\s]+)\s*,\s*([^,\s]+)\s*,\s*([0-9]+)\s*\))");
  std::smatch m;
  if (std::regex_match(spec, m, film_re)) {
    FilmParams p;
    try {
      p.rms = std::stod(m[1].str());
      p.corr_len = parse_length(m[2].str());
      p.seed = std::stoull(m[3].str());
    } catch (const std::logic_error&) {
      throw DomainError("invalid film preset '" + spec + "'");
    }
    return PhaseScreen(std::nullopt, make_film(cfg, p));
  }
  throw DomainError("unknown preset '" + spec + "' (expected none, saddle, eq7 or film(rms, corr_len, seed))");
}

double max_aperture_gradient(const OpticalConfig& cfg, const PhaseScreen& screen, int samples) {
  double worst = 0.0;
  const double w = cfg.aperture_pitch;
  for (int r = 0; r < cfg.aperture_rows; ++r)
    for (int c = 0; c < cfg.aperture_cols; ++c) {
      const Vec2 ctr = aperture_center(cfg, {c, r});
      // Mean of the gradient over the cell = edge-to-edge phase difference
      // averaged along the other axis, divided by the width.
      double gx = 0.0, gy = 0.0;
      for (int i = 0; i < samples; ++i) {
        const double t = (i + 0.5) / samples * w - 0.5 * w;
        gx += screen.value(cfg, ctr + Vec2{0.5 * w, t}) - screen.value(cfg, ctr + Vec2{-0.5 * w, t});
        gy += screen.value(cfg, ctr + Vec2{t, 0.5 * w}) - screen.value(cfg, ctr + Vec2{t, -0.5 * w});
      }
      gx /= samples * w;
      gy /= samples * w;
      worst = std::max({worst, std::abs(gx), std::abs(gy)});
    }
  return worst;
}

}  // namespace biphoton

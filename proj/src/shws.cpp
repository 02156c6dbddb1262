#include "biphoton/shws.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "biphoton/config_file.hpp"
#include "biphoton/errors.hpp"

namespace biphoton {

std::string to_string(PeakQuality q) {
  switch (q) {
    case PeakQuality::ok: return "ok";
    case PeakQuality::out_of_range: return "out_of_range";
    case PeakQuality::no_peak: return "no_peak";
  }
  return "no_peak";
}

PeakQuality parse_quality(const std::string& text) {
  if (text == "ok") return PeakQuality::ok;
  if (text == "out_of_range") return PeakQuality::out_of_range;
  if (text == "no_peak") return PeakQuality::no_peak;
  throw FormatError("unknown aperture flag '" + text + "'");
}

CellRect aperture_cells(const OpticalConfig& cfg, ApertureIndex a, int map_width, int map_height) {
  const Vec2 c = aperture_center(cfg, a);
  const double half = 0.5 * cfg.aperture_pitch;
  const Vec2 lo_cell = to_half_cell(cfg, c - Vec2{half, half});
  const Vec2 hi_cell = to_half_cell(cfg, c + Vec2{half, half});
  CellRect r;
  // Scan a slightly wider range and keep the cells aperture_of assigns to a,
  // so the rectangle follows the half-open convention exactly.
  auto axis = [&](double lo, double hi, int limit, bool is_x, int& first, int& last) {
    first = 0;
    last = 0;
    bool found = false;
    for (int i = static_cast<int>(std::floor(lo)) - 1; i <= static_cast<int>(std::ceil(hi)) + 1; ++i) {
      if (i < 0 || i >= limit) continue;
      const Vec2 probe = from_half_cell(cfg, is_x ? Vec2{static_cast<double>(i), lo_cell.y + 0.5 * (hi_cell.y - lo_cell.y)}
                                                  : Vec2{lo_cell.x + 0.5 * (hi_cell.x - lo_cell.x), static_cast<double>(i)});
      const auto owner = aperture_of(cfg, probe);
      if (!owner || (is_x ? owner->col != a.col : owner->row != a.row)) continue;
      if (!found) first = i;
      last = i + 1;
      found = true;
    }
  };
  axis(lo_cell.x, hi_cell.x, map_width, true, r.x0, r.x1);
  axis(lo_cell.y, hi_cell.y, map_height, false, r.y0, r.y1);
  return r;
}

Peak find_peak(const Grid<double>& map, const OpticalConfig& cfg, ApertureIndex a) {
  const CellRect r = aperture_cells(cfg, a, map.width(), map.height());
  Peak peak;
  if (r.width() < 4 || r.height() < 4) return peak;

  int bu = -1, bv = -1;
  double best = -std::numeric_limits<double>::infinity();
  for (int v = r.y0; v + 4 <= r.y1; ++v)
    for (int u = r.x0; u + 4 <= r.x1; ++u) {
      double sum = 0.0;
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) sum += map(u + i, v + j);
      if (sum > best) {
        best = sum;
        bu = u;
        bv = v;
      }
    }

  double wsum = 0.0, sx = 0.0, sy = 0.0;
  for (int y = std::max(r.y0, bv - 2); y < std::min(r.y1, bv + 6); ++y)
    for (int x = std::max(r.x0, bu - 2); x < std::min(r.x1, bu + 6); ++x) {
      const double w = std::max(0.0, map(x, y));
      wsum += w;
      sx += w * x;
      sy += w * y;
    }
  if (!(wsum > 0)) return peak;
  peak.cell = {sx / wsum, sy / wsum};
  peak.position = from_half_cell(cfg, peak.cell);
  peak.quality = PeakQuality::ok;
  return peak;
}

ApertureGradient to_gradient(const Peak& peak, ApertureIndex a, const OpticalConfig& cfg) {
  ApertureGradient g{a, {}, peak.cell, peak.quality};
  if (peak.quality == PeakQuality::no_peak) return g;
  const double scale = cfg.wave_number() / cfg.f_sh;
  g.kappa = scale * (peak.position - aperture_center(cfg, a));
  g.quality = within_dynamic_range(cfg, g.kappa) ? PeakQuality::ok : PeakQuality::out_of_range;
  return g;
}

int GradientField::count(PeakQuality q) const {
  return static_cast<int>(std::count_if(apertures.begin(), apertures.end(), [&](const auto& g) { return g.quality == q; }));
}

GradientField measure_gradients(const Grid<double>& map, const OpticalConfig& cfg) {
  if (map.width() != 2 * cfg.roi_width || map.height() != 2 * cfg.roi_height)
    throw DomainError("centroid map does not match the ROI half-pixel grid");
  GradientField field{cfg.aperture_cols, cfg.aperture_rows, {}};
  for (int r = 0; r < cfg.aperture_rows; ++r)
    for (int c = 0; c < cfg.aperture_cols; ++c) field.apertures.push_back(to_gradient(find_peak(map, cfg, {c, r}), {c, r}, cfg));
  return field;
}

GradientField subtract_reference(const GradientField& field, const GradientField& reference) {
  if (field.cols != reference.cols || field.rows != reference.rows || field.apertures.size() != reference.apertures.size())
    throw DomainError("gradient fields cover different aperture grids");
  GradientField out = field;
  for (std::size_t i = 0; i < out.apertures.size(); ++i) {
    auto& g = out.apertures[i];
    const auto& ref = reference.apertures[i];
    g.kappa = g.kappa - ref.kappa;
    g.quality = std::max(g.quality, ref.quality);  // enum order: ok < out_of_range < no_peak
  }
  return out;
}

GradientField synthesize_gradients(const legendre::LegendreCoeffs& coeffs, const OpticalConfig& cfg) {
  GradientField field{cfg.aperture_cols, cfg.aperture_rows, {}};
  const double half = 0.5 * cfg.aperture_pitch / cfg.rescale_halfwidth;
  for (int r = 0; r < cfg.aperture_rows; ++r)
    for (int c = 0; c < cfg.aperture_cols; ++c) {
      const auto rows = legendre::design_row(to_normalized(cfg, aperture_center(cfg, {c, r})), half, coeffs.max_degree());
      double kx = 0.0, ky = 0.0;
      for (std::size_t k = 0; k < coeffs.size(); ++k) {
        kx += rows.kx[k] * coeffs[k];
        ky += rows.ky[k] * coeffs[k];
      }
      const Vec2 kappa{kx / cfg.rescale_halfwidth, ky / cfg.rescale_halfwidth};
      field.apertures.push_back({{c, r}, kappa, {}, within_dynamic_range(cfg, kappa) ? PeakQuality::ok : PeakQuality::out_of_range});
    }
  return field;
}

Reconstruction reconstruct(const GradientField& field, const OpticalConfig& cfg, int max_degree, int raster_size) {
  if (field.cols != cfg.aperture_cols || field.rows != cfg.aperture_rows)
    throw DomainError("gradient field does not match the aperture grid");
  const double half = 0.5 * cfg.aperture_pitch / cfg.rescale_halfwidth;
  std::vector<legendre::GradientSample> samples;
  for (const auto& g : field.apertures) {
    if (g.quality != PeakQuality::ok) continue;
    samples.push_back({to_normalized(cfg, aperture_center(cfg, g.aperture)), half,
                       gradient_to_normalized(cfg, g.kappa.x), gradient_to_normalized(cfg, g.kappa.y)});
  }
  const auto unknowns = legendre::modes(max_degree).size();
  if (2 * samples.size() < unknowns) {
    std::ostringstream msg;
    msg << "too few usable apertures for " << unknowns << " modes: ok=" << field.count(PeakQuality::ok)
        << " out_of_range=" << field.count(PeakQuality::out_of_range) << " no_peak=" << field.count(PeakQuality::no_peak);
    throw NumericalError(msg.str());
  }
  auto solution = legendre::solve_modal(samples, max_degree);
  Reconstruction out{solution.coeffs, solution.residual, legendre::rasterize(solution.coeffs, raster_size),
                     static_cast<int>(samples.size())};
  return out;
}

double snr(const Grid<double>& map, const OpticalConfig& cfg, ApertureIndex a) {
  const CellRect r = aperture_cells(cfg, a, map.width(), map.height());
  if (r.width() < 2 || r.height() < 2) throw DomainError("aperture too small for the SNR block");
  int bu = r.x0, bv = r.y0;
  double best = -std::numeric_limits<double>::infinity();
  for (int v = r.y0; v + 2 <= r.y1; ++v)
    for (int u = r.x0; u + 2 <= r.x1; ++u) {
      const double sum = map(u, v) + map(u + 1, v) + map(u, v + 1) + map(u + 1, v + 1);
      if (sum > best) {
        best = sum;
        bu = u;
        bv = v;
      }
    }
  const double signal = best / 4.0;
  double sum = 0.0, sum2 = 0.0;
  long n = 0;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      if (x >= bu - 4 && x <= bu + 5 && y >= bv - 4 && y <= bv + 5) continue;
      sum += map(x, y);
      sum2 += map(x, y) * map(x, y);
      ++n;
    }
  if (n == 0) return std::numeric_limits<double>::infinity();
  const double mean = sum / n;
  const double var = std::max(0.0, sum2 / n - mean * mean);
  if (var == 0.0) return std::numeric_limits<double>::infinity();
  return signal / std::sqrt(var);
}

PowerLawFit fit_power_law(std::span<const std::pair<double, double>> points) {
  PowerLawFit fit;
  std::vector<std::pair<double, double>> logs;
  for (const auto& [n, s] : points) {
    if (!(n > 0) || !(s > 0) || !std::isfinite(s)) {
      ++fit.excluded;
      continue;
    }
    logs.emplace_back(std::log(n), std::log(s));
  }
  std::vector<double> xs;
  for (const auto& p : logs) xs.push_back(p.first);
  std::sort(xs.begin(), xs.end());
  if (logs.size() < 3 || std::adjacent_find(xs.begin(), xs.end()) != xs.end())
    throw DomainError("power-law fit needs at least three usable points with distinct N");
  const double m = static_cast<double>(logs.size());
  double sx = 0, sy = 0;
  for (const auto& [x, y] : logs) sx += x, sy += y;
  const double mx = sx / m, my = sy / m;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [x, y] : logs) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  fit.exponent = sxy / sxx;
  fit.amplitude = std::exp(my - fit.exponent * mx);
  double sse = 0;
  for (const auto& [x, y] : logs) {
    const double e = y - (my + fit.exponent * (x - mx));
    sse += e * e;
  }
  fit.r_squared = syy > 0 ? 1.0 - sse / syy : 1.0;
  fit.used = static_cast<int>(logs.size());
  return fit;
}

void write_gradients(std::ostream& out, const GradientField& field) {
  out << "# col row kx ky flag (kx, ky in rad/m)\n";
  for (const auto& g : field.apertures)
    out << g.aperture.col << ' ' << g.aperture.row << ' ' << format_number(g.kappa.x) << ' ' << format_number(g.kappa.y)
        << ' ' << to_string(g.quality) << '\n';
}

GradientField read_gradients(std::istream& in, const std::string& source) {
  std::map<std::pair<int, int>, ApertureGradient> rows;
  std::string line;
  int lineno = 0, cols = 0, nrows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    ApertureGradient g;
    std::string flag;
    if (!(ls >> g.aperture.col)) continue;
    if (!(ls >> g.aperture.row >> g.kappa.x >> g.kappa.y >> flag) || g.aperture.col < 0 || g.aperture.row < 0)
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected 'col row kx ky flag'");
    g.quality = parse_quality(flag);
    cols = std::max(cols, g.aperture.col + 1);
    nrows = std::max(nrows, g.aperture.row + 1);
    rows[{g.aperture.row, g.aperture.col}] = g;
  }
  if (rows.size() != static_cast<std::size_t>(cols) * static_cast<std::size_t>(nrows) || rows.empty())
    throw FormatError(source + ": gradient table does not cover a full aperture grid");
  GradientField field{cols, nrows, {}};
  for (const auto& [key, g] : rows) field.apertures.push_back(g);
  return field;
}

}  // namespace biphoton

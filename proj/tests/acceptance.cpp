// End-to-end acceptance run: one PASS/FAIL line per criterion, details on
// the same line. Exit status is nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "biphoton/cli/commands.hpp"
#include "biphoton/frame_io.hpp"
#include "biphoton/imaging.hpp"
#include "biphoton/jpd.hpp"
#include "biphoton/screen.hpp"
#include "biphoton/shws.hpp"
#include "biphoton/simulate.hpp"
#include "biphoton/spectrum.hpp"

using namespace biphoton;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kHalfPixel = 6.5e-6;

int failures = 0;

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
  if (!pass) ++failures;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream o;
  o.precision(digits);
  o << v;
  return o.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int worker_threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

AccumulateOptions shws_options() {
  AccumulateOptions o;
  o.window = window_pixels(300e-6, 13e-6);
  o.threads = worker_threads();
  return o;
}

// Simulates straight into an accumulator. `on_frame` sees the running frame
// count after each frame; accumulation time is added to *acc_seconds.
CoincidenceStats simulate_stats(const PairSource& src, const DetectorModel& det, std::uint64_t n, std::uint64_t seed,
                                const AccumulateOptions& opts,
                                const std::function<void(std::uint64_t, Accumulator&)>& on_frame = {},
                                double* acc_seconds = nullptr) {
  Accumulator acc(src.sensor().width, src.sensor().height, opts);
  std::uint64_t done = 0;
  simulate_frames(
      src, det, n, seed,
      [&](std::span<const BitFrame> frames, std::uint64_t) {
        for (const auto& f : frames) {
          const auto t0 = Clock::now();
          acc.add(f);
          if (acc_seconds) *acc_seconds += seconds_since(t0);
          ++done;
          if (on_frame) on_frame(done, acc);
        }
      },
      opts.threads);
  return acc.finish();
}

Grid<double> cleaned_centroid(const CoincidenceStats& s) { return remove_background(centroid_marginal(s).values); }

struct Measurement {
  GradientField field;
  Reconstruction recon;
};

Measurement measure_screen(const OpticalConfig& cfg, const PhaseScreen& screen, std::uint64_t frames, std::uint64_t seed,
                           const GradientField& reference) {
  const ShwsSource src(cfg, screen, CorrelationKernel{});
  const auto stats = simulate_stats(src, DetectorModel{}, frames, seed, shws_options());
  Measurement m;
  m.field = subtract_reference(measure_gradients(cleaned_centroid(stats), cfg), reference);
  m.recon = reconstruct(m.field, cfg);
  return m;
}

legendre::LegendreCoeffs drop_tilt(legendre::LegendreCoeffs c) {
  c.set(1, 0, 0.0);
  c.set(0, 1, 0.0);
  return c;
}

std::string flags(const GradientField& f) {
  return "ok=" + std::to_string(f.count(PeakQuality::ok)) + " out_of_range=" + std::to_string(f.count(PeakQuality::out_of_range)) +
         " no_peak=" + std::to_string(f.count(PeakQuality::no_peak));
}

// ---- 4 -----------------------------------------------------------------

void displacement_law() {
  const OpticalConfig cfg;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  const double dr = dynamic_range(cfg);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Vec2 q{u(rng) * dr, u(rng) * dr};
    const ApertureIndex a{static_cast<int>(rng() % 7), static_cast<int>(rng() % 7)};
    legendre::LegendreCoeffs c;
    c.set(1, 0, q.x * cfg.rescale_halfwidth);
    c.set(0, 1, q.y * cfg.rescale_halfwidth);
    const auto s = aperture_centroid_spectrum(cfg, PhaseScreen(c), a);
    int bi = 0, bj = 0;
    for (int j = 0; j < s.fine.height(); ++j)
      for (int i = 0; i < s.fine.width(); ++i)
        if (s.fine(i, j) > s.fine(bi, bj)) bi = i, bj = j;
    const Vec2 err = s.fine_position(bi, bj) - aperture_center(cfg, a) - cfg.f_sh / cfg.wave_number() * q;
    worst = std::max({worst, std::abs(err.x), std::abs(err.y)});
  }
  verdict(4, "displacement law", worst <= kHalfPixel,
          "20 tilts within 80% of range, worst peak error " + fmt(worst * 1e6) + " um (limit 6.5 um)");
}

// ---- 5 -----------------------------------------------------------------

void estimator_oracle() {
  // Real simulated frames cropped to a 24x24 window around the optical axis.
  const OpticalConfig cfg;
  const ShwsSource src(cfg, preset_screen(cfg, "saddle"), CorrelationKernel{});
  const int n = 1500, side = 24, x0 = 70, y0 = 70;
  std::vector<BitFrame> frames;
  simulate_frames(src, DetectorModel{}, n, 55, [&](std::span<const BitFrame> fs, std::uint64_t) {
    for (const auto& f : fs) {
      BitFrame c(side, side);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          if (f.get(x0 + x, y0 + y)) c.set(x, y);
      frames.push_back(std::move(c));
    }
  });
  AccumulateOptions o;
  o.window = 23;
  const auto stats = accumulate(frames, o);

  // Brute force: every pixel pair, counts straight from the frames.
  const int p = side * side;
  std::vector<std::uint64_t> singles(p, 0), joint(static_cast<std::size_t>(p) * p, 0);
  std::vector<int> lit;
  for (const auto& f : frames) {
    lit.clear();
    for (int i = 0; i < p; ++i)
      if (f.get(i % side, i / side)) lit.push_back(i);
    for (int a : lit) {
      ++singles[a];
      for (int b : lit) ++joint[static_cast<std::size_t>(a) * p + b];
    }
  }
  std::vector<__int128> sums(static_cast<std::size_t>(4 * p), 0);
  for (int a = 0; a < p; ++a)
    for (int b = a + 1; b < p; ++b) {
      const int ax = a % side, ay = a / side, bx = b % side, by = b / side;
      if (std::abs(ax - bx) > o.window || std::abs(ay - by) > o.window) continue;
      const __int128 num = static_cast<__int128>(n) * joint[static_cast<std::size_t>(a) * p + b] -
                           static_cast<__int128>(singles[a]) * singles[b];
      sums[static_cast<std::size_t>((ay + by) * 2 * side + ax + bx)] += 2 * num;
    }
  MarginalOptions mo;
  mo.smear.enabled = false;
  const auto map = centroid_marginal(stats, mo);
  long mismatched = 0;
  for (std::size_t i = 0; i < sums.size(); ++i) {
    const double expect = static_cast<double>(sums[i]) / (static_cast<double>(n) * n * 2.0);
    if (map.values.values()[i] != expect) ++mismatched;
  }

  // Two-pass covariance in extended precision.
  double worst = 0.0;
  std::vector<long double> mean(p, 0.0L);
  for (const auto& f : frames)
    for (int i = 0; i < p; ++i) mean[i] += f.get(i % side, i / side);
  for (auto& m : mean) m /= n;
  for (int a = 0; a < p; a += 7)
    for (const auto& off : half_window_offsets(o.window)) {
      const PixelCoord pa{a % side, a / side}, pb{pa.x + off.dx, pa.y + off.dy};
      if (!stats.inside(pb)) continue;
      const int b = stats.linear(pb);
      long double c = 0.0L;
      for (const auto& f : frames) c += (f.get(pa.x, pa.y) - mean[a]) * (f.get(pb.x, pb.y) - mean[b]);
      c /= n;
      const double est = covariance(stats, pa, pb);
      const long double scale = std::max(std::fabs(c), std::fabs(static_cast<long double>(est)));
      if (scale < 1e-18L) continue;  // both exactly zero up to rounding
      worst = std::max(worst, static_cast<double>(std::fabs(c - est) / scale));
    }
  verdict(5, "estimator oracle", mismatched == 0 && worst <= 1e-12,
          std::to_string(mismatched) + " of " + std::to_string(sums.size()) +
              " centroid cells differ from brute force; worst covariance relative error " + fmt(worst, 3));
}

// ---- 9 -----------------------------------------------------------------

void determinism_and_merge() {
  const OpticalConfig cfg;
  const ShwsSource src(cfg, preset_screen(cfg, "saddle"), CorrelationKernel{});
  const std::uint64_t n = 4096;
  std::vector<BitFrame> frames;
  simulate_frames(src, DetectorModel{}, n, 91, [&](std::span<const BitFrame> f, std::uint64_t) {
    frames.insert(frames.end(), f.begin(), f.end());
  });
  auto opts = shws_options();
  const auto single = accumulate(frames, opts);
  CoincidenceStats merged;
  const std::span<const BitFrame> all(frames);
  for (int part = 0; part < 8; ++part) {
    const auto piece = accumulate(all.subspan(part * n / 8, n / 8), opts);
    merged = part == 0 ? piece : merge(merged, piece);
  }
  const bool counters_equal = merged == single;
  frames.clear();
  frames.shrink_to_fit();

  const auto dir = fs::temp_directory_path() / "biphoton_acceptance";
  fs::create_directories(dir);
  auto write = [&](const fs::path& path, std::uint64_t seed) {
    FrameWriter w(path, cfg.roi_width, cfg.roi_height);
    simulate_frames(src, DetectorModel{}, 300, seed, [&](std::span<const BitFrame> f, std::uint64_t) {
      for (const auto& fr : f) w.write(fr);
    }, 1);
    w.close();
    return cli::sha256_file(path);
  };
  const auto d1 = write(dir / "a.pcbf", 7);
  // A different thread count must not change the bytes.
  const auto d2 = [&] {
    FrameWriter w(dir / "b.pcbf", cfg.roi_width, cfg.roi_height);
    simulate_frames(src, DetectorModel{}, 300, 7, [&](std::span<const BitFrame> f, std::uint64_t) {
      for (const auto& fr : f) w.write(fr);
    }, 3, 64);
    w.close();
    return cli::sha256_file(dir / "b.pcbf");
  }();
  verdict(9, "determinism and merge", counters_equal && d1 == d2,
          std::string("8-partition merge ") + (counters_equal ? "identical" : "DIFFERS") + " to single pass over " +
              std::to_string(n) + " frames; same-seed frame digests " + (d1 == d2 ? "equal" : "DIFFER") + " (" +
              d1.substr(0, 16) + ")");
}

// ---- 8 -----------------------------------------------------------------

void anticorrelated_variant() {
  // 2x2 lenslets with the symmetry center on their shared vertex. The full
  // sensor keeps pairs from being clipped unevenly in separation.
  OpticalConfig cfg;
  cfg.aperture_cols = cfg.aperture_rows = 2;
  cfg.rescale_halfwidth = 300e-6;
  cfg.validate();
  SourceOptions so;
  so.mode = PairMode::anticorrelated;
  so.symmetry_center = {0.0, 0.0};
  const DetectorModel det;
  AccumulateOptions ao;
  ao.window = window_pixels(500e-6, cfg.sensor_pixel);
  ao.threads = worker_threads();

  // Offset of the difference peak next to the displacement from aperture b to a.
  auto offsets = [&](const PhaseScreen& screen, std::vector<ApertureIndex> from) {
    const ShwsSource src(cfg, screen, CorrelationKernel{}, so);
    const auto stats = simulate_stats(src, det, 20000, 13, ao);
    const auto d = difference_marginal(stats).values;
    const int w = ao.window;
    std::vector<Vec2> out;
    for (const auto a : from) {
      const Vec2 ca = aperture_center(cfg, a);
      const Vec2 disp = 2.0 * (ca - so.symmetry_center);
      const int cx = w + static_cast<int>(std::lround(disp.x / cfg.sensor_pixel));
      const int cy = w + static_cast<int>(std::lround(disp.y / cfg.sensor_pixel));
      // Brightest 3x3 block within +-11 px, then the weighted mean of the 7x7 around it.
      int bx = cx, by = cy;
      double best = -1e300;
      for (int y = cy - 11; y <= cy + 11; ++y)
        for (int x = cx - 11; x <= cx + 11; ++x) {
          double s = 0.0;
          for (int j = -1; j <= 1; ++j)
            for (int i = -1; i <= 1; ++i) s += d(x + i, y + j);
          if (s > best) best = s, bx = x, by = y;
        }
      double ws = 0.0, sx = 0.0, sy = 0.0;
      for (int y = by - 3; y <= by + 3; ++y)
        for (int x = bx - 3; x <= bx + 3; ++x) {
          const double v = std::max(0.0, d(x, y));
          ws += v;
          sx += v * x;
          sy += v * y;
        }
      const Vec2 peak{(sx / ws - w) * cfg.sensor_pixel, (sy / ws - w) * cfg.sensor_pixel};
      out.push_back(peak - disp);
    }
    return out;
  };
  const std::vector<ApertureIndex> from{{0, 0}, {1, 0}};

  legendre::LegendreCoeffs odd;
  odd.set(1, 0, 5.0);
  odd.set(2, 1, 3.0);
  odd.set(0, 3, -2.0);
  double worst_odd = 0.0;
  for (const Vec2 o : offsets(PhaseScreen(odd), from)) worst_odd = std::max({worst_odd, std::abs(o.x), std::abs(o.y)});

  legendre::LegendreCoeffs even;
  even.set(2, 0, 4.0);
  even.set(0, 2, -3.0);
  even.set(1, 1, 2.0);
  double worst_even = 0.0;
  const auto measured = offsets(PhaseScreen(even), from);
  for (std::size_t i = 0; i < from.size(); ++i) {
    // Aperture-averaged gradient of the even screen from the analytic design row.
    const Vec2 cn = to_normalized(cfg, aperture_center(cfg, from[i]));
    const auto row = legendre::design_row(cn, 0.5 * cfg.aperture_pitch / cfg.rescale_halfwidth, even.max_degree());
    Vec2 g;
    for (std::size_t k = 0; k < even.size(); ++k) {
      g.x += row.kx[k] * even[k];
      g.y += row.ky[k] * even[k];
    }
    const Vec2 q0 = (1.0 / cfg.rescale_halfwidth) * g;
    const Vec2 expect = 2.0 * cfg.f_sh / cfg.wave_number() * q0;
    worst_even = std::max({worst_even, std::abs(measured[i].x - expect.x), std::abs(measured[i].y - expect.y)});
  }
  verdict(8, "anti-correlated variant", worst_odd <= kHalfPixel && worst_even <= kHalfPixel,
          "odd screen worst offset " + fmt(worst_odd * 1e6) + " um; even screen worst error vs 2 f q0/k " +
              fmt(worst_even * 1e6) + " um (limit 6.5 um, 2x2 lenslets, center at the vertex, window " + std::to_string(ao.window) + " px)");
}

}  // namespace

int main() {
  std::cout << "acceptance run, " << worker_threads() << " worker thread(s) on " << std::thread::hardware_concurrency()
            << " available core(s)" << std::endl;
  const auto t_start = Clock::now();

  displacement_law();
  estimator_oracle();
  determinism_and_merge();
  anticorrelated_variant();

  const OpticalConfig cfg;
  const auto zero = legendre::PhaseRaster(120, 120, 0.0);

  // ---- 6 and 10: no-phase run, prefix snapshots; the 1e5 prefix is the reference.
  GradientField reference;
  {
    const std::vector<std::uint64_t> ns{5000, 10000, 20000, 40000, 100000, 280000};
    const ShwsSource src(cfg, PhaseScreen{}, CorrelationKernel{});
    std::vector<std::pair<double, double>> points;
    double acc_seconds = 0.0, acc_seconds_1e5 = 0.0, lit_1e5 = 0.0;
    std::size_t next = 0;
    const auto t0 = Clock::now();
    simulate_stats(src, DetectorModel{}, ns.back(), 1, shws_options(),
                   [&](std::uint64_t done, Accumulator& acc) {
                     if (next >= ns.size() || done != ns[next]) return;
                     const auto ts = Clock::now();
                     const auto& s = acc.stats();
                     acc_seconds += seconds_since(ts);
                     const auto cleaned = cleaned_centroid(s);
                     points.emplace_back(static_cast<double>(done), snr(cleaned, cfg, {3, 3}));
                     if (done == 100000) {
                       reference = measure_gradients(cleaned, cfg);
                       acc_seconds_1e5 = acc_seconds;
                       double lit = 0.0;
                       for (auto c : s.singles) lit += static_cast<double>(c);
                       lit_1e5 = lit / static_cast<double>(done);
                     }
                     ++next;
                   },
                   &acc_seconds);
    const double total = seconds_since(t0);
    std::string pts;
    for (const auto& [n, v] : points) pts += " " + fmt(n, 6) + ":" + fmt(v);
    try {
      const auto fit = fit_power_law(points);
      verdict(6, "SNR scaling", fit.exponent >= 0.4 && fit.exponent <= 0.65 && fit.r_squared >= 0.9,
              "exponent " + fmt(fit.exponent) + " (0.4..0.65), R^2 " + fmt(fit.r_squared) + " (>= 0.9); N:snr" + pts);
    } catch (const std::exception& e) {
      verdict(6, "SNR scaling", false, std::string("fit failed: ") + e.what() + ";" + pts);
    }
    const int k = 2 * 23 * 23 + 2 * 23;
    const double pixel_pairs = 1e5 * cfg.roi_width * cfg.roi_height * static_cast<double>(k);
    const double lit_pairs = 1e5 * lit_1e5 * static_cast<double>(k);
    verdict(10, "throughput", acc_seconds_1e5 <= 300.0,
            "accumulated 1e5 frames (165x165, W=23, K=" + std::to_string(k) + ") in " + fmt(acc_seconds_1e5) + " s with " +
                std::to_string(worker_threads()) + " thread(s) (limit 300 s on 8 cores); mean lit " + fmt(lit_1e5) +
                "/frame; lit x window bound " + fmt(lit_pairs / acc_seconds_1e5, 3) + " pair updates/s; bit-sliced " +
                fmt(pixel_pairs / acc_seconds_1e5, 3) + " pixel pairs/s; simulation+accumulation of 2.8e5 frames " +
                fmt(total) + " s");
  }
  std::cout << "reference: " << flags(reference) << std::endl;

  // ---- 1: saddle.
  {
    const auto m = measure_screen(cfg, preset_screen(cfg, "saddle"), 100000, 2, reference);
    const auto& c = m.recon.coeffs;
    double worst_other = 0.0;
    const auto modes = legendre::modes(c.max_degree());
    for (std::size_t i = 0; i < modes.size(); ++i) {
      const auto [mm, nn] = modes[i];
      if ((mm == 1 && nn == 0) || (mm == 0 && nn == 1) || (mm == 2 && nn == 0) || (mm == 0 && nn == 2)) continue;
      worst_other = std::max(worst_other, std::abs(c[i]));
    }
    const double a20 = c.get(2, 0), a02 = c.get(0, 2);
    verdict(1, "saddle recovery",
            a20 >= 9.0 && a20 <= 11.0 && a02 >= -11.0 && a02 <= -9.0 && worst_other < 1.0,
            "alpha_2,0 " + fmt(a20) + " (9..11), alpha_0,2 " + fmt(a02) + " (-11..-9), worst other non-tilt " +
                fmt(worst_other) + " (< 1); " + flags(m.field));
  }

  // ---- 2: seven-mode pattern.
  {
    const auto truth = eq7_coeffs();
    const auto m = measure_screen(cfg, PhaseScreen(truth), 100000, 3, reference);
    const double rmse = legendre::rmse_waves(m.recon.raster, legendre::rasterize(truth, 120), true);
    double worst = 0.0;
    std::string got;
    for (const auto& [mm, nn] : std::vector<std::pair<int, int>>{{2, 0}, {1, 1}, {0, 2}, {3, 0}, {2, 1}, {1, 2}, {0, 3}}) {
      worst = std::max(worst, std::abs(m.recon.coeffs.get(mm, nn) - truth.get(mm, nn)));
      got += " " + std::to_string(mm) + std::to_string(nn) + ":" + fmt(m.recon.coeffs.get(mm, nn));
    }
    verdict(2, "seven-mode pattern", rmse <= 0.08 && worst <= 1.0,
            "RMSE " + fmt(rmse) + " waves (<= 0.08), worst coefficient error " + fmt(worst) + " (<= 1);" + got);
  }

  // ---- 3: closed-loop film correction.
  {
    const auto film = preset_screen(cfg, "film(1.5, 600um, 1)");
    const double grad = max_aperture_gradient(cfg, film);
    const auto before = measure_screen(cfg, film, 100000, 4, reference);
    const auto corrected = film.plus(-drop_tilt(before.recon.coeffs));
    const double rmse_before = legendre::rmse_waves(film.rasterize(cfg, 120), zero, true);
    const double residual = legendre::rmse_waves(corrected.rasterize(cfg, 120), zero, true);
    const auto after = measure_screen(cfg, corrected, 100000, 5, reference);
    const double measured_after = legendre::rmse_waves(after.recon.raster, zero, true);
    verdict(3, "closed-loop film correction",
            grad < dynamic_range(cfg) && residual <= 0.08 && measured_after <= 0.08,
            "film RMS 1.5 rad, correlation length 600 um, max gradient " + fmt(grad) + " rad/m (range " +
                fmt(dynamic_range(cfg)) + "); RMSE before " + fmt(rmse_before) + " waves, true residual after " +
                fmt(residual) + " waves, re-measured after " + fmt(measured_after) + " waves (both <= 0.08)");
  }

  // ---- 7: imaging.
  {
    const ImagingConfig icfg;
    const auto mask = bar_mask(icfg);
    const auto expected = effective_image(icfg, mask);
    const auto film = preset_screen(cfg, "film(5, 900um, 3)");
    const auto m = measure_screen(cfg, film, 100000, 6, reference);
    const auto corrected = film.plus(-drop_tilt(m.recon.coeffs));
    AccumulateOptions io;
    io.window = 1;
    io.threads = worker_threads();
    io.anticorr_center2 = icfg.doubled_center();
    SmearRule rule;
    rule.all_rows = true;
    const std::uint64_t frames = 500000;
    auto ncc = [&](const PhaseScreen& s, std::uint64_t seed) {
      const ImagingSource src(icfg, mask, cfg, s);
      const auto stats = simulate_stats(src, imaging_detector(), frames, seed, io);
      return normalized_cross_correlation(anticorr_map(stats, rule), expected);
    };
    const double clear = ncc(PhaseScreen{}, 7);
    const double aberrated = ncc(film, 8);
    const double fixed = ncc(corrected, 9);
    verdict(7, "imaging recovery", clear >= 0.5 && aberrated <= 0.2 && fixed >= 0.4,
            "NCC no film " + fmt(clear) + " (>= 0.5), film " + fmt(aberrated) + " (<= 0.2), corrected " + fmt(fixed) +
                " (>= 0.4); 5e5 frames each at " + std::to_string(icfg.width) + "x" + std::to_string(icfg.height) +
                ", film RMS 5 rad, correlation length 900 um, residual after correction " +
                fmt(legendre::rmse_waves(corrected.rasterize(cfg, 120), zero, true)) + " waves");
  }

  std::cout << "total time " << fmt(seconds_since(t_start)) << " s, " << failures << " failure(s)" << std::endl;
  return failures == 0 ? 0 : 1;
}

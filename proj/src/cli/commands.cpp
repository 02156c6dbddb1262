#include "biphoton/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "biphoton/errors.hpp"
#include "biphoton/frame_io.hpp"
#include "biphoton/grid_io.hpp"
#include "biphoton/shws.hpp"
#include "biphoton/stats_io.hpp"

namespace biphoton::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kDefaultTruncation = 300e-6;

// Stage label prefixed to module errors, keeping the error category.
template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const NumericalError& e) {
    throw NumericalError(name + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(name + ": " + e.what());
  } catch (const DomainError& e) {
    throw DomainError(name + ": " + e.what());
  }
}

std::string num(double v) { return format_number(v); }

struct Context {
  std::string command;
  std::vector<std::string> args;
  KeyValueConfig kv;
  std::string config_path;  // empty when absent or overridden
  fs::path out;
  int threads = 1;
  std::ostream* log = nullptr;
  Manifest manifest;
  std::vector<std::string> output_files;

  void param(const std::string& key, const std::string& value) { manifest.params[key] = value; }
  void input(const fs::path& p) { manifest.inputs.emplace_back(p.string(), sha256_file(p)); }
  fs::path output(const std::string& name) {
    if (std::find(output_files.begin(), output_files.end(), name) == output_files.end()) output_files.push_back(name);
    return out / name;
  }
  // Grid outputs carry a sidecar that is listed too.
  fs::path grid_output(const std::string& name) {
    output(name + ".meta");
    return output(name);
  }
};

void begin(Context& ctx) {
  if (ctx.out.empty()) throw UsageError("--out is required");
  if (ctx.threads < 1) throw UsageError("--threads must be at least 1");
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec || !fs::is_directory(ctx.out)) throw FormatError("cannot create output directory '" + ctx.out.string() + "'");
  ctx.manifest.tool = tool_version();
  ctx.manifest.command = ctx.command;
  ctx.manifest.args = ctx.args;
  ctx.manifest.config = ctx.kv.entries();
  if (!ctx.config_path.empty()) {
    ctx.param("config_file", ctx.config_path);
    ctx.input(ctx.config_path);
  }
}

void finish(Context& ctx) {
  for (const auto& name : ctx.output_files) ctx.manifest.outputs.emplace_back(name, sha256_file(ctx.out / name));
  write_manifest(ctx.out, ctx.manifest);
}

int window_for(double truncation, double pixel) {
  if (!(truncation > 0)) throw UsageError("--window-um must be positive");
  return window_pixels(truncation, pixel);
}

std::optional<FrameFileHeader> frame_header_of(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::uint8_t header[kFrameHeaderSize];
  in.read(reinterpret_cast<char*>(header), kFrameHeaderSize);
  if (in.gcount() >= 4 && std::memcmp(header, "PCBF", 4) == 0) {
    if (in.gcount() < static_cast<std::streamsize>(kFrameHeaderSize))
      throw FormatError(path.string() + ": truncated header (need 32 bytes at offset 0)");
    return decode_frame_header(header, path.string());
  }
  return std::nullopt;
}

PixelCoord parse_pixel(const std::string& text, const std::string& what) {
  const auto sep = text.find(',');
  try {
    if (sep == std::string::npos) throw std::invalid_argument(text);
    std::size_t a = 0, b = 0;
    const int x = std::stoi(text.substr(0, sep), &a);
    const int y = std::stoi(text.substr(sep + 1), &b);
    if (a != sep || b != text.size() - sep - 1) throw std::invalid_argument(text);
    return {x, y};
  } catch (const std::logic_error&) {
    throw UsageError(what + " expects X,Y integers, got '" + text + "'");
  }
}

std::string describe_flags(const GradientField& f) {
  std::string out;
  for (const auto& g : f.apertures) {
    if (g.quality == PeakQuality::ok) continue;
    if (!out.empty()) out += ' ';
    out += std::to_string(g.aperture.col) + "," + std::to_string(g.aperture.row) + ":" + to_string(g.quality);
  }
  return out.empty() ? "none" : out;
}

legendre::LegendreCoeffs without_tilt(legendre::LegendreCoeffs c) {
  c.set(1, 0, 0.0);
  c.set(0, 1, 0.0);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

std::string coeff_table(const legendre::LegendreCoeffs& c) {
  std::ostringstream out;
  legendre::write_coeffs(out, c);
  return out.str();
}

void record_screen(Context& ctx, const OpticalConfig& cfg, const PhaseScreen& screen) {
  if (screen.modal()) {
    const auto modes = screen.modal()->mode_list();
    for (std::size_t i = 0; i < modes.size(); ++i)
      if ((*screen.modal())[i] != 0.0)
        ctx.param("screen.alpha." + std::to_string(modes[i].m) + "_" + std::to_string(modes[i].n), num((*screen.modal())[i]));
    write_text(ctx.output("screen_coeffs.txt"), coeff_table(*screen.modal()));
  }
  if (screen.raster()) {
    const auto& r = *screen.raster();
    write_grid(ctx.grid_output("screen_raster.pcbg"), r.phase,
               {{"units", "rad"},
                {"lower_x", num(r.lower.x) + "m"},
                {"lower_y", num(r.lower.y) + "m"},
                {"step_x", num(r.step.x) + "m"},
                {"step_y", num(r.step.y) + "m"}});
  }
  ctx.param("screen.max_gradient_rad_per_m", num(max_aperture_gradient(cfg, screen)));
}

// Streams n simulated frames into a frame file.
void write_frames(const fs::path& path, const PairSource& source, const DetectorModel& det, std::uint64_t n,
                  std::uint64_t seed, int threads) {
  FrameWriter writer(path, source.sensor().width, source.sensor().height);
  simulate_frames(source, det, n, seed, [&](std::span<const BitFrame> frames, std::uint64_t) {
    for (const auto& f : frames) writer.write(f);
  }, threads);
  writer.close();
}

CoincidenceStats simulate_stats(const PairSource& source, const DetectorModel& det, std::uint64_t n, std::uint64_t seed,
                                const AccumulateOptions& opts) {
  Accumulator acc(source.sensor().width, source.sensor().height, opts);
  simulate_frames(source, det, n, seed, [&](std::span<const BitFrame> frames, std::uint64_t) { acc.add(frames); },
                  opts.threads);
  return acc.finish();
}

// Fraction of the (positive) centroid signal inside the best 4x4 block of
// each usable aperture, averaged over apertures.
double peak_concentration(const Grid<double>& map, const OpticalConfig& cfg) {
  double total = 0.0;
  int used = 0;
  for (int r = 0; r < cfg.aperture_rows; ++r)
    for (int c = 0; c < cfg.aperture_cols; ++c) {
      const CellRect rect = aperture_cells(cfg, {c, r}, map.width(), map.height());
      double all = 0.0, best = 0.0;
      for (int y = rect.y0; y < rect.y1; ++y)
        for (int x = rect.x0; x < rect.x1; ++x) all += std::max(0.0, map(x, y));
      for (int y = rect.y0; y + 4 <= rect.y1; ++y)
        for (int x = rect.x0; x + 4 <= rect.x1; ++x) {
          double s = 0.0;
          for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i) s += std::max(0.0, map(x + i, y + j));
          best = std::max(best, s);
        }
      if (all > 0.0) {
        total += best / all;
        ++used;
      }
    }
  return used ? total / used : 0.0;
}

struct Measured {
  CentroidMap raw;
  Grid<double> cleaned;
  GradientField field;
};

Measured measure(const CoincidenceStats& stats, const OpticalConfig& cfg) {
  if (stats.width != cfg.roi_width || stats.height != cfg.roi_height)
    throw FormatError("frames are " + std::to_string(stats.width) + "x" + std::to_string(stats.height) +
                      " but the configured ROI is " + std::to_string(cfg.roi_width) + "x" + std::to_string(cfg.roi_height));
  Measured m;
  m.raw = stage("centroid marginal", [&] { return centroid_marginal(stats); });
  m.cleaned = stage("background", [&] { return remove_background(m.raw.values); });
  m.field = stage("peaks", [&] { return measure_gradients(m.cleaned, cfg); });
  return m;
}

// ---- subcommands -----------------------------------------------------------

struct ScreenArgs {
  std::string preset, coeffs, raster, correction;

  void add(CLI::App* sub, bool with_correction = true) {
    sub->add_option("--preset", preset, "Named screen: none, saddle, eq7, film(rms, corr_len, seed)");
    sub->add_option("--coeffs", coeffs, "Coefficient file (m n alpha per line)");
    sub->add_option("--raster", raster, "Phase raster grid file (rad)");
    if (with_correction) sub->add_option("--correction", correction, "Coefficient file added to the screen");
  }
  PhaseScreen load(Context& ctx, const OpticalConfig& cfg) const {
    if (!coeffs.empty()) ctx.input(coeffs);
    if (!raster.empty()) ctx.input(raster);
    ctx.param("screen", !preset.empty() ? preset : !coeffs.empty() ? "coeffs" : !raster.empty() ? "raster" : "none");
    PhaseScreen screen = load_screen(cfg, {preset, coeffs, raster});
    if (!correction.empty()) {
      ctx.input(correction);
      std::ifstream in(correction);
      if (!in) throw FormatError("cannot open correction file '" + correction + "'");
      screen = screen.plus(legendre::read_coeffs(in, correction));
    }
    return screen;
  }
};

struct SimulateArgs {
  std::uint64_t frames = 0;
  std::uint64_t seed = 1;
  std::string mode = "correlated";
  ScreenArgs screen;
};

void cmd_simulate(Context& ctx, const SimulateArgs& a) {
  if (a.frames == 0) throw UsageError("--frames must be at least 1");
  if (a.mode != "correlated" && a.mode != "anticorrelated")
    throw UsageError("--mode must be correlated or anticorrelated for simulate");
  begin(ctx);
  const OpticalConfig cfg = optical_config_from(ctx.kv);
  const PhaseScreen screen = a.screen.load(ctx, cfg);
  SourceOptions so;
  so.mode = a.mode == "anticorrelated" ? PairMode::anticorrelated : PairMode::correlated;
  if (auto c = ctx.kv.get("symmetry_center")) so.symmetry_center = parse_length_pair(*c);
  so.spectrum.pupil_samples = static_cast<int>(ctx.kv.integer("spectrum.pupil_samples", so.spectrum.pupil_samples));
  so.spectrum.oversample = static_cast<int>(ctx.kv.integer("spectrum.oversample", so.spectrum.oversample));
  const DetectorModel det = detector_from(ctx.kv);
  const ShwsSource source = stage("spectra", [&] { return ShwsSource(cfg, screen, kernel_from(ctx.kv), so); });
  ctx.param("frames", std::to_string(a.frames));
  ctx.param("seed", std::to_string(a.seed));
  ctx.param("mode", a.mode);
  record_screen(ctx, cfg, screen);
  stage("simulate", [&] { write_frames(ctx.output("frames.pcbf"), source, det, a.frames, a.seed, ctx.threads); });
  finish(ctx);
  *ctx.log << "wrote " << a.frames << " frames to " << (ctx.out / "frames.pcbf").string() << "\n";
}

void cmd_simulate_imaging(Context& ctx, const SimulateArgs& a) {
  if (a.frames == 0) throw UsageError("--frames must be at least 1");
  begin(ctx);
  const OpticalConfig cfg = optical_config_from(ctx.kv);
  const ImagingConfig icfg = imaging_from(ctx.kv);
  const PhaseScreen screen = a.screen.load(ctx, cfg);
  const auto mask = bar_mask(icfg, static_cast<int>(ctx.kv.integer("imaging.bar_px", 3)));
  const DetectorModel det = detector_from(ctx.kv, "imaging.", imaging_detector());
  const ImagingSource source = stage("psf", [&] { return ImagingSource(icfg, mask, cfg, screen); });
  ctx.param("frames", std::to_string(a.frames));
  ctx.param("seed", std::to_string(a.seed));
  record_screen(ctx, cfg, screen);
  write_grid(ctx.grid_output("mask.pcbg"), mask, {{"units", "transmission"}, {"axis", "imaging pixels"}});
  write_grid(ctx.grid_output("expected.pcbg"), effective_image(icfg, mask),
             {{"units", "relative pair rate"}, {"axis", "imaging pixels"}});
  stage("simulate", [&] { write_frames(ctx.output("frames.pcbf"), source, det, a.frames, a.seed, ctx.threads); });
  finish(ctx);
  *ctx.log << "wrote " << a.frames << " imaging frames to " << (ctx.out / "frames.pcbf").string() << "\n";
}

struct AccumulateArgs {
  std::vector<std::string> inputs;
  double window_um = kDefaultTruncation * 1e6;
  std::string camera = "shws";
  bool anticorr = false;
  std::string postselect;
};

double camera_pixel(const Context& ctx, const std::string& camera) {
  if (camera == "shws") return optical_config_from(ctx.kv).sensor_pixel;
  if (camera == "imaging") return imaging_from(ctx.kv).pixel;
  throw UsageError("--camera must be shws or imaging");
}

AccumulateOptions accumulate_options(const Context& ctx, const AccumulateArgs& a, int width, int height) {
  AccumulateOptions opts;
  opts.window = window_for(a.window_um * 1e-6, camera_pixel(ctx, a.camera));
  opts.threads = ctx.threads;
  if (a.anticorr) opts.anticorr_center2 = PixelCoord{width - 1, height - 1};
  if (!a.postselect.empty()) opts.postselect = parse_pixel(a.postselect, "--postselect");
  return opts;
}

void cmd_accumulate(Context& ctx, const AccumulateArgs& a) {
  begin(ctx);
  std::optional<Accumulator> acc;
  int width = 0, height = 0;
  for (const auto& path : a.inputs) {
    ctx.input(path);
    const auto header = frame_header_of(path);
    if (!header) throw FormatError(path + ": not a frame file (magic at offset 0)");
    if (!acc) {
      width = header->width;
      height = header->height;
      const auto opts = accumulate_options(ctx, a, width, height);
      ctx.param("window_px", std::to_string(opts.window));
      acc.emplace(width, height, opts);
    } else if (header->width != width || header->height != height) {
      throw FormatError(path + ": frame size differs from the first input");
    }
    stage("accumulate " + path, [&] {
      FrameReader reader(path);
      BitFrame frame(width, height);
      while (reader.next(frame)) acc->add(frame);
    });
  }
  const auto stats = acc->finish();
  ctx.param("frames", std::to_string(stats.n_frames));
  write_stats(ctx.output("stats.pcbs"), stats);
  finish(ctx);
  *ctx.log << "accumulated " << stats.n_frames << " frames (window " << stats.window << " px)\n";
}

void cmd_merge(Context& ctx, const std::vector<std::string>& inputs) {
  begin(ctx);
  std::optional<CoincidenceStats> total;
  for (const auto& path : inputs) {
    ctx.input(path);
    auto s = stage("merge " + path, [&] { return read_stats(path); });
    if (!total) {
      total = std::move(s);
    } else {
      if (!total->compatible(s)) throw FormatError(path + ": statistics are not compatible (size, window or counters)");
      *total += s;
    }
  }
  ctx.param("frames", std::to_string(total->n_frames));
  write_stats(ctx.output("stats.pcbs"), *total);
  finish(ctx);
  *ctx.log << "merged " << inputs.size() << " files, " << total->n_frames << " frames\n";
}

struct ReconstructArgs {
  std::string input;
  std::string reference;
  double window_um = kDefaultTruncation * 1e6;
  bool no_tilt = false;
  ScreenArgs truth;
  // correct only
  std::uint64_t frames = 0;
  std::uint64_t seed = 1;
  std::uint64_t imaging_frames = 0;
};

struct Solved {
  Measured measured;
  GradientField field;  // after reference subtraction
  Reconstruction recon;
  std::uint64_t n_frames = 0;
};

Solved solve(const CoincidenceStats& stats, const std::optional<GradientField>& reference, const OpticalConfig& cfg,
             int max_degree, int raster_size, bool no_tilt) {
  Solved s;
  s.n_frames = stats.n_frames;
  s.measured = measure(stats, cfg);
  s.field = reference ? subtract_reference(s.measured.field, *reference) : s.measured.field;
  s.recon = stage("reconstruct", [&] { return reconstruct(s.field, cfg, max_degree, raster_size); });
  if (no_tilt) {
    s.recon.coeffs = without_tilt(s.recon.coeffs);
    s.recon.raster = legendre::rasterize(s.recon.coeffs, raster_size);
  }
  return s;
}

std::string gradient_table(const GradientField& f) {
  std::ostringstream out;
  write_gradients(out, f);
  return out.str();
}

void cmd_reconstruct(Context& ctx, const ReconstructArgs& a) {
  begin(ctx);
  const OpticalConfig cfg = optical_config_from(ctx.kv);
  const int max_degree = static_cast<int>(ctx.kv.integer("max_degree", 5));
  const int raster_size = static_cast<int>(ctx.kv.integer("raster_size", 120));
  AccumulateOptions opts;
  opts.window = window_for(a.window_um * 1e-6, cfg.sensor_pixel);
  opts.threads = ctx.threads;
  ctx.input(a.input);
  std::optional<GradientField> reference;
  if (!a.reference.empty()) {
    ctx.input(a.reference);
    const auto ref_stats = stage("reference accumulate", [&] { return load_or_accumulate(a.reference, opts); });
    reference = stage("reference", [&] { return measure(ref_stats, cfg).field; });
    write_text(ctx.output("reference_gradients.txt"), gradient_table(*reference));
  }
  const bool have_truth = !a.truth.preset.empty() || !a.truth.coeffs.empty() || !a.truth.raster.empty();
  std::optional<PhaseScreen> truth;
  if (have_truth) truth = a.truth.load(ctx, cfg);

  const auto stats = stage("accumulate", [&] { return load_or_accumulate(a.input, opts); });
  const Solved s = solve(stats, reference, cfg, max_degree, raster_size, a.no_tilt);

  write_grid(ctx.grid_output("centroid.pcbg"), s.measured.raw.values,
             {{"units", "covariance"}, {"axis", "half-pixel cells"}, {"frames", std::to_string(s.n_frames)}});
  write_grid(ctx.grid_output("centroid_clean.pcbg"), s.measured.cleaned,
             {{"units", "covariance"}, {"axis", "half-pixel cells"}, {"background", "median 9x9"}});
  write_text(ctx.output("gradients.txt"), gradient_table(s.field));
  write_text(ctx.output("coeffs.txt"), coeff_table(s.recon.coeffs));
  write_grid(ctx.grid_output("phase.pcbg"), s.recon.raster, {{"units", "rad"}, {"axis", "normalized [-1,1]"}});

  std::ostringstream report;
  report << "frames = " << s.n_frames << "\n";
  report << "reference = " << (a.reference.empty() ? "none" : a.reference) << "\n";
  report << "window_px = " << stats.window << "\n";
  report << "max_degree = " << max_degree << "\n";
  report << "tilt = " << (a.no_tilt ? "dropped" : "kept") << "\n";
  report << "apertures_ok = " << s.field.count(PeakQuality::ok) << "\n";
  report << "apertures_out_of_range = " << s.field.count(PeakQuality::out_of_range) << "\n";
  report << "apertures_no_peak = " << s.field.count(PeakQuality::no_peak) << "\n";
  report << "flagged = " << describe_flags(s.field) << "\n";
  report << "used_apertures = " << s.recon.used_apertures << "\n";
  report << "residual = " << num(s.recon.residual) << "\n";
  report << "snr_center = " << num(snr(s.measured.cleaned, cfg, {cfg.aperture_cols / 2, cfg.aperture_rows / 2})) << "\n";
  if (truth) {
    const double rmse = legendre::rmse_waves(s.recon.raster, truth->rasterize(cfg, raster_size), true);
    report << "rmse_vs_truth_waves = " << num(rmse) << "\n";
    ctx.param("rmse_vs_truth_waves", num(rmse));
  }
  report << "# m n alpha\n" << coeff_table(s.recon.coeffs);
  write_text(ctx.output("report.txt"), report.str());
  ctx.param("reference", a.reference.empty() ? "none" : a.reference);
  ctx.param("frames", std::to_string(s.n_frames));
  finish(ctx);
  *ctx.log << report.str();
}

void cmd_correct(Context& ctx, const ReconstructArgs& a) {
  begin(ctx);
  const OpticalConfig cfg = optical_config_from(ctx.kv);
  const int max_degree = static_cast<int>(ctx.kv.integer("max_degree", 5));
  const int raster_size = static_cast<int>(ctx.kv.integer("raster_size", 120));
  AccumulateOptions opts;
  opts.window = window_for(a.window_um * 1e-6, cfg.sensor_pixel);
  opts.threads = ctx.threads;
  ctx.input(a.input);
  const PhaseScreen screen = a.truth.load(ctx, cfg);
  std::optional<GradientField> reference;
  if (!a.reference.empty()) {
    ctx.input(a.reference);
    const auto ref_stats = stage("reference accumulate", [&] { return load_or_accumulate(a.reference, opts); });
    reference = stage("reference", [&] { return measure(ref_stats, cfg).field; });
  }
  const auto stats = stage("accumulate", [&] { return load_or_accumulate(a.input, opts); });
  const Solved before = solve(stats, reference, cfg, max_degree, raster_size, a.no_tilt);
  const legendre::LegendreCoeffs correction = -before.recon.coeffs;
  write_text(ctx.output("correction.txt"), coeff_table(correction));

  const std::uint64_t n = a.frames ? a.frames : before.n_frames;
  const PhaseScreen corrected = screen.plus(correction);
  SourceOptions so;
  so.spectrum.pupil_samples = static_cast<int>(ctx.kv.integer("spectrum.pupil_samples", so.spectrum.pupil_samples));
  so.spectrum.oversample = static_cast<int>(ctx.kv.integer("spectrum.oversample", so.spectrum.oversample));
  const DetectorModel det = detector_from(ctx.kv);
  const auto after_stats = stage("re-simulate", [&] {
    const ShwsSource source(cfg, corrected, kernel_from(ctx.kv), so);
    return simulate_stats(source, det, n, a.seed, opts);
  });
  const Solved after = solve(after_stats, reference, cfg, max_degree, raster_size, a.no_tilt);
  write_grid(ctx.grid_output("centroid_before.pcbg"), before.measured.cleaned, {{"units", "covariance"}});
  write_grid(ctx.grid_output("centroid_after.pcbg"), after.measured.cleaned, {{"units", "covariance"}});
  write_text(ctx.output("gradients_after.txt"), gradient_table(after.field));

  const auto zero = legendre::PhaseRaster(raster_size, raster_size, 0.0);
  std::ostringstream report;
  report << "frames_before = " << before.n_frames << "\n";
  report << "frames_after = " << n << "\n";
  report << "reference = " << (a.reference.empty() ? "none" : a.reference) << "\n";
  report << "tilt = " << (a.no_tilt ? "dropped" : "kept") << "\n";
  report << "flagged_before = " << describe_flags(before.field) << "\n";
  report << "flagged_after = " << describe_flags(after.field) << "\n";
  report << "peak_concentration_before = " << num(peak_concentration(before.measured.cleaned, cfg)) << "\n";
  report << "peak_concentration_after = " << num(peak_concentration(after.measured.cleaned, cfg)) << "\n";
  const double rmse_before = legendre::rmse_waves(screen.rasterize(cfg, raster_size), zero, true);
  const double rmse_after = legendre::rmse_waves(corrected.rasterize(cfg, raster_size), zero, true);
  const double measured_after = legendre::rmse_waves(after.recon.raster, zero, true);
  report << "residual_rmse_before_waves = " << num(rmse_before) << "\n";
  report << "residual_rmse_after_waves = " << num(rmse_after) << "\n";
  report << "measured_rmse_after_waves = " << num(measured_after) << "\n";
  ctx.param("residual_rmse_after_waves", num(rmse_after));

  if (a.imaging_frames > 0) {
    const ImagingConfig icfg = imaging_from(ctx.kv);
    const auto mask = bar_mask(icfg, static_cast<int>(ctx.kv.integer("imaging.bar_px", 3)));
    const auto expected = effective_image(icfg, mask);
    const DetectorModel idet = detector_from(ctx.kv, "imaging.", imaging_detector());
    AccumulateOptions iopts;
    iopts.window = 1;
    iopts.threads = ctx.threads;
    iopts.anticorr_center2 = icfg.doubled_center();
    SmearRule rule;
    rule.all_rows = true;
    auto image = [&](const PhaseScreen& s, std::uint64_t seed, const std::string& name) {
      const auto st = stage("imaging " + name, [&] {
        const ImagingSource src(icfg, mask, cfg, s);
        return simulate_stats(src, idet, a.imaging_frames, seed, iopts);
      });
      const auto map = anticorr_map(st, rule);
      write_grid(ctx.grid_output("anticorr_" + name + ".pcbg"), map, {{"units", "covariance"}});
      return normalized_cross_correlation(map, expected);
    };
    report << "imaging_frames = " << a.imaging_frames << "\n";
    report << "ncc_before = " << num(image(screen, a.seed + 1, "before")) << "\n";
    report << "ncc_after = " << num(image(corrected, a.seed + 2, "after")) << "\n";
  }
  report << "# correction: m n alpha\n" << coeff_table(correction);
  write_text(ctx.output("report.txt"), report.str());
  finish(ctx);
  *ctx.log << report.str();
}

struct ImageArgs {
  std::string input;
  std::string mode = "anticorr";
  AccumulateArgs acc;
  std::string compare;
};

void cmd_image(Context& ctx, ImageArgs a) {
  static const std::vector<std::string> modes = {"direct", "cpd", "anticorr", "centroid", "difference"};
  if (std::find(modes.begin(), modes.end(), a.mode) == modes.end())
    throw UsageError("--mode must be one of direct, cpd, anticorr, centroid, difference");
  begin(ctx);
  ctx.input(a.input);
  const auto header = frame_header_of(a.input);
  CoincidenceStats stats;
  if (header) {
    a.acc.anticorr = a.acc.anticorr || a.mode == "anticorr";
    if (a.mode == "cpd" && a.acc.postselect.empty()) throw UsageError("mode cpd needs --postselect X,Y");
    const auto opts = accumulate_options(ctx, a.acc, header->width, header->height);
    stats = stage("accumulate", [&] { return load_or_accumulate(a.input, opts); });
  } else {
    stats = stage("load", [&] { return read_stats(a.input); });
    if (a.mode == "anticorr" && !stats.anticorr_center2)
      throw UsageError(a.input + " has no anti-correlation counters; re-accumulate with --anticorr or pass frames");
    if (a.mode == "cpd" && !stats.postselect)
      throw UsageError(a.input + " has no postselection counters; re-accumulate with --postselect X,Y or pass frames");
  }
  SmearRule imaging_rule;
  imaging_rule.all_rows = true;
  Grid<double> map;
  std::string axis = "pixels";
  if (a.mode == "direct") map = direct_image(stats);
  if (a.mode == "cpd") map = cpd(stats, imaging_rule);
  if (a.mode == "anticorr") map = anticorr_map(stats, imaging_rule);
  if (a.mode == "centroid") {
    map = centroid_marginal(stats).values;
    axis = "half-pixel cells";
  }
  if (a.mode == "difference") {
    map = difference_marginal(stats).values;
    axis = "pixel displacement, origin at the center";
  }
  write_grid(ctx.grid_output(a.mode + ".pcbg"), map,
             {{"units", a.mode == "direct" ? "mean count" : "covariance"}, {"axis", axis},
              {"frames", std::to_string(stats.n_frames)}});
  ctx.param("mode", a.mode);
  ctx.param("frames", std::to_string(stats.n_frames));
  if (!a.compare.empty()) {
    ctx.input(a.compare);
    const double ncc = normalized_cross_correlation(map, read_grid(a.compare));
    ctx.param("ncc", num(ncc));
    *ctx.log << "ncc = " << num(ncc) << "\n";
  }
  finish(ctx);
  *ctx.log << "wrote " << (ctx.out / (a.mode + ".pcbg")).string() << "\n";
}

struct SnrArgs {
  std::string input;
  std::string n_list;
  std::string aperture;
  double window_um = kDefaultTruncation * 1e6;
};

void cmd_snr(Context& ctx, const SnrArgs& a) {
  std::vector<std::uint64_t> ns;
  {
    std::stringstream in(a.n_list);
    std::string item;
    while (std::getline(in, item, ',')) {
      try {
        std::size_t used = 0;
        const double v = std::stod(item, &used);
        if (used != item.size() || v < 1 || v != std::floor(v)) throw std::invalid_argument(item);
        ns.push_back(static_cast<std::uint64_t>(v));
      } catch (const std::logic_error&) {
        throw UsageError("--n-list expects positive integers separated by commas, got '" + item + "'");
      }
    }
  }
  if (ns.empty()) throw UsageError("--n-list is empty");
  if (!std::is_sorted(ns.begin(), ns.end()) || std::adjacent_find(ns.begin(), ns.end()) != ns.end())
    throw UsageError("--n-list must be strictly ascending");
  FrameReader reader(a.input);
  if (reader.frame_count() < ns.back())
    throw FormatError(a.input + " holds " + std::to_string(reader.frame_count()) + " frames, fewer than " +
                      std::to_string(ns.back()));
  begin(ctx);
  const OpticalConfig cfg = optical_config_from(ctx.kv);
  ApertureIndex ap{cfg.aperture_cols / 2, cfg.aperture_rows / 2};
  if (!a.aperture.empty()) {
    const auto p = parse_pixel(a.aperture, "--aperture");
    ap = {p.x, p.y};
    if (!valid_aperture(cfg, ap)) throw UsageError("--aperture outside the aperture grid");
  }
  ctx.input(a.input);
  AccumulateOptions opts;
  opts.window = window_for(a.window_um * 1e-6, cfg.sensor_pixel);
  opts.threads = ctx.threads;
  Accumulator acc(reader.header().width, reader.header().height, opts);
  BitFrame frame(reader.header().width, reader.header().height);
  std::vector<std::pair<double, double>> points;
  std::ostringstream csv;
  csv << "frames,snr\n";
  std::uint64_t done = 0;
  for (const auto n : ns) {
    while (done < n && reader.next(frame)) {
      acc.add(frame);
      ++done;
    }
    const auto& stats = acc.stats();
    const Measured m = measure(stats, cfg);
    const double value = snr(m.cleaned, cfg, ap);
    points.emplace_back(static_cast<double>(n), value);
    csv << n << "," << num(value) << "\n";
  }
  write_text(ctx.output("snr.csv"), csv.str());
  std::ostringstream report;
  report << "aperture = " << ap.col << "," << ap.row << "\n";
  report << "points = " << points.size() << "\n";
  try {
    const auto fit = fit_power_law(points);
    report << "fit = ok\n";
    report << "amplitude = " << num(fit.amplitude) << "\n";
    report << "exponent = " << num(fit.exponent) << "\n";
    report << "r_squared = " << num(fit.r_squared) << "\n";
    report << "used = " << fit.used << "\n";
    report << "excluded = " << fit.excluded << "\n";
    ctx.param("exponent", num(fit.exponent));
  } catch (const DomainError& e) {
    report << "fit = refused (" << e.what() << ")\n";
  }
  write_text(ctx.output("report.txt"), report.str());
  finish(ctx);
  *ctx.log << csv.str() << report.str();
}

// Drops --config and --out (both `--x v` and `--x=v` forms).
std::vector<std::string> strip_args(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& s = args[i];
    if (s == "--config" || s == "--out") {
      ++i;
      continue;
    }
    if (s.starts_with("--config=") || s.starts_with("--out=")) continue;
    out.push_back(s);
  }
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const std::optional<KeyValueConfig>& config_override) {
  CLI::App app{"Biphoton Shack-Hartmann simulation and reconstruction pipeline", "biphoton"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tool_version());

  std::string config_path, out_dir;
  int threads = 1;
  auto common = [&](CLI::App* sub, bool with_config = true) {
    if (with_config) sub->add_option("--config", config_path, "Config file (key = value)");
    sub->add_option("--out", out_dir, "Output directory")->required();
    sub->add_option("--threads", threads, "Worker threads")->capture_default_str();
  };

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Simulate wavefront-sensor coincidence frames");
  common(s_sim);
  s_sim->add_option("--frames", sim.frames, "Number of frames")->required();
  s_sim->add_option("--seed", sim.seed, "Run seed")->capture_default_str();
  s_sim->add_option("--mode", sim.mode, "correlated or anticorrelated")->capture_default_str();
  sim.screen.add(s_sim);

  SimulateArgs isim;
  auto* s_isim = app.add_subcommand("simulate-imaging", "Simulate anti-correlated imaging frames");
  common(s_isim);
  s_isim->add_option("--frames", isim.frames, "Number of frames")->required();
  s_isim->add_option("--seed", isim.seed, "Run seed")->capture_default_str();
  isim.screen.add(s_isim);

  AccumulateArgs acc;
  auto* s_acc = app.add_subcommand("accumulate", "Accumulate coincidence statistics from frame files");
  common(s_acc);
  s_acc->add_option("frames", acc.inputs, "Frame files")->required();
  s_acc->add_option("--window-um", acc.window_um, "Truncation length in micrometers")->capture_default_str();
  s_acc->add_option("--camera", acc.camera, "Pixel pitch source: shws or imaging")->capture_default_str();
  s_acc->add_flag("--anticorr", acc.anticorr, "Track coincidences with the ROI-center mirror pixel");
  s_acc->add_option("--postselect", acc.postselect, "Track coincidences with pixel X,Y");

  std::vector<std::string> merge_inputs;
  auto* s_merge = app.add_subcommand("merge", "Merge statistics checkpoints");
  common(s_merge, false);
  s_merge->add_option("stats", merge_inputs, "Checkpoint files")->required();

  ReconstructArgs rec;
  auto* s_rec = app.add_subcommand("reconstruct", "Reconstruct the phase from frames or statistics");
  common(s_rec);
  s_rec->add_option("input", rec.input, "Frame file or statistics checkpoint")->required();
  s_rec->add_option("--reference", rec.reference, "No-phase reference frames or statistics");
  s_rec->add_option("--window-um", rec.window_um, "Truncation length in micrometers")->capture_default_str();
  s_rec->add_flag("--no-tilt", rec.no_tilt, "Drop the tilt modes from the result");
  rec.truth.add(s_rec, false);

  ReconstructArgs cor;
  auto* s_cor = app.add_subcommand("correct", "Closed-loop correction: reconstruct, apply the conjugate, re-simulate");
  common(s_cor);
  s_cor->add_option("input", cor.input, "Frames measured through the screen")->required();
  s_cor->add_option("--reference", cor.reference, "No-phase reference frames or statistics");
  s_cor->add_option("--window-um", cor.window_um, "Truncation length in micrometers")->capture_default_str();
  s_cor->add_flag("--no-tilt", cor.no_tilt, "Drop the tilt modes from the correction");
  s_cor->add_option("--frames", cor.frames, "Frames for the re-simulation (default: as measured)");
  s_cor->add_option("--seed", cor.seed, "Re-simulation seed")->capture_default_str();
  s_cor->add_option("--imaging-frames", cor.imaging_frames, "Also image the target before and after correction");
  cor.truth.add(s_cor, false);

  ImageArgs img;
  auto* s_img = app.add_subcommand("image", "Export direct, CPD, anti-correlation, centroid or difference maps");
  common(s_img);
  s_img->add_option("input", img.input, "Frame file or statistics checkpoint")->required();
  s_img->add_option("--mode", img.mode, "direct, cpd, anticorr, centroid or difference")->capture_default_str();
  s_img->add_option("--window-um", img.acc.window_um, "Truncation length in micrometers")->capture_default_str();
  s_img->add_option("--camera", img.acc.camera, "Pixel pitch source: shws or imaging")->capture_default_str();
  s_img->add_option("--postselect", img.acc.postselect, "Postselected pixel X,Y");
  s_img->add_option("--compare", img.compare, "Grid file to correlate the map with");

  SnrArgs snr_args;
  auto* s_snr = app.add_subcommand("snr", "SNR of the centroid peak on frame prefixes and its power-law fit");
  common(s_snr);
  s_snr->add_option("frames", snr_args.input, "Frame file")->required();
  s_snr->add_option("--n-list", snr_args.n_list, "Ascending prefix lengths, comma separated")->required();
  s_snr->add_option("--aperture", snr_args.aperture, "Aperture COL,ROW (default: center)");
  s_snr->add_option("--window-um", snr_args.window_um, "Truncation length in micrometers")->capture_default_str();

  std::string manifest_path;
  auto* s_replay = app.add_subcommand("replay", "Re-run a command from its manifest");
  s_replay->add_option("manifest", manifest_path, "Manifest file")->required();
  s_replay->add_option("--out", out_dir, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s_replay->parsed()) {
      const Manifest m = read_manifest(manifest_path);
      // The config is replayed from its snapshot; other inputs must be unchanged.
      const auto config_file = m.params.find("config_file");
      for (const auto& [path, digest] : m.inputs) {
        if (config_file != m.params.end() && path == config_file->second) continue;
        if (!fs::exists(path)) throw FormatError("replay input '" + path + "' is missing");
        if (sha256_file(path) != digest) throw FormatError("replay input '" + path + "' changed since the run");
      }
      std::vector<std::string> again{m.command};
      const auto rest = strip_args(m.args);
      again.insert(again.end(), rest.begin(), rest.end());
      again.push_back("--out");
      again.push_back(out_dir);
      KeyValueConfig kv;
      for (const auto& [k, v] : m.config) kv.set(k, v);
      return run(again, out, err, kv);
    }

    Context ctx;
    ctx.command = app.get_subcommands().front()->get_name();
    ctx.args.assign(args.begin() + 1, args.end());
    ctx.out = out_dir;
    ctx.threads = threads;
    ctx.log = &out;
    if (config_override) {
      ctx.kv = *config_override;
    } else if (!config_path.empty()) {
      ctx.kv = KeyValueConfig::load(config_path);
      ctx.config_path = config_path;
    }

    if (s_sim->parsed()) cmd_simulate(ctx, sim);
    if (s_isim->parsed()) cmd_simulate_imaging(ctx, isim);
    if (s_acc->parsed()) cmd_accumulate(ctx, acc);
    if (s_merge->parsed()) cmd_merge(ctx, merge_inputs);
    if (s_rec->parsed()) cmd_reconstruct(ctx, rec);
    if (s_cor->parsed()) cmd_correct(ctx, cor);
    if (s_img->parsed()) cmd_image(ctx, img);
    if (s_snr->parsed()) cmd_snr(ctx, snr_args);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DomainError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace biphoton::cli

#include <openssl/evp.h>

#include <array>
#include <cstring>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>

#include "biphoton/cli/commands.hpp"
#include "biphoton/errors.hpp"
#include "biphoton/frame_io.hpp"
#include "biphoton/grid_io.hpp"
#include "biphoton/stats_io.hpp"

#ifndef BIPHOTON_VERSION
#define BIPHOTON_VERSION "0.0.0"
#endif

namespace biphoton::cli {

std::string tool_version() { return std::string("biphoton ") + BIPHOTON_VERSION; }

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "' for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

namespace {

void check_value(const std::string& key, const std::string& value) {
  if (value.find_first_of("#\n\r") != std::string::npos)
    throw UsageError("manifest value for '" + key + "' contains '#' or a line break");
  if (!value.empty() && (value.front() == ' ' || value.back() == ' '))
    throw UsageError("manifest value for '" + key + "' has surrounding spaces");
}

std::string current_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string manifest_body(const Manifest& m) {
  std::ostringstream out;
  auto line = [&](const std::string& key, const std::string& value) {
    check_value(key, value);
    out << key << " = " << value << "\n";
  };
  line("tool", m.tool);
  line("command", m.command);
  for (std::size_t i = 0; i < m.args.size(); ++i) line("arg." + std::to_string(i), m.args[i]);
  for (const auto& [k, v] : m.config) line("config." + k, v);
  for (const auto& [k, v] : m.params) line("param." + k, v);
  for (std::size_t i = 0; i < m.inputs.size(); ++i) {
    line("input." + std::to_string(i), m.inputs[i].first);
    line("input." + std::to_string(i) + ".sha256", m.inputs[i].second);
  }
  for (std::size_t i = 0; i < m.outputs.size(); ++i) {
    line("output." + std::to_string(i), m.outputs[i].first);
    line("output." + std::to_string(i) + ".sha256", m.outputs[i].second);
  }
  return out.str();
}

void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
  const auto path = dir / kManifestName;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << manifest_body(m) << "timestamp = " << (m.timestamp.empty() ? current_timestamp() : m.timestamp) << "\n";
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

Manifest read_manifest(const std::filesystem::path& path) {
  const auto kv = KeyValueConfig::load(path);
  Manifest m;
  m.tool = kv.text("tool", "");
  m.command = kv.text("command", "");
  if (m.command.empty()) throw FormatError(path.string() + ": manifest has no command");
  m.timestamp = kv.text("timestamp", "");
  auto indexed = [&](const std::string& prefix) {
    std::vector<std::string> values;
    for (std::size_t i = 0;; ++i) {
      auto v = kv.get(prefix + std::to_string(i));
      if (!v) break;
      values.push_back(*v);
    }
    return values;
  };
  m.args = indexed("arg.");
  for (const auto& [k, v] : kv.entries()) {
    if (k.starts_with("config.")) m.config[k.substr(7)] = v;
    if (k.starts_with("param.")) m.params[k.substr(6)] = v;
  }
  auto files = [&](const std::string& prefix) {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0;; ++i) {
      auto p = kv.get(prefix + std::to_string(i));
      if (!p) break;
      out.emplace_back(*p, kv.text(prefix + std::to_string(i) + ".sha256", ""));
    }
    return out;
  };
  m.inputs = files("input.");
  m.outputs = files("output.");
  return m;
}

DetectorModel detector_from(const KeyValueConfig& kv, const std::string& prefix, DetectorModel base) {
  DetectorModel d = base;
  d.quantum_efficiency = kv.number(prefix + "quantum_efficiency", d.quantum_efficiency);
  d.dark_count_prob = kv.number(prefix + "dark_count_prob", d.dark_count_prob);
  d.pairs_per_frame = kv.number(prefix + "pairs_per_frame", d.pairs_per_frame);
  d.smear_prob = kv.number(prefix + "smear_prob", d.smear_prob);
  d.rate_drift = kv.number(prefix + "rate_drift", d.rate_drift);
  d.validate();
  return d;
}

CorrelationKernel kernel_from(const KeyValueConfig& kv) {
  CorrelationKernel k;
  const auto kind = kv.text("kernel", "gaussian");
  if (kind == "gaussian")
    k.kind = KernelKind::gaussian;
  else if (kind == "sinc2" || kind == "sinc-squared")
    k.kind = KernelKind::sinc2;
  else
    throw FormatError("unknown kernel '" + kind + "' (expected gaussian or sinc2)");
  k.position_fwhm = kv.length("position_fwhm", k.position_fwhm);
  k.spot_fwhm = kv.length("spot_fwhm", k.spot_fwhm);
  return k;
}

ImagingConfig imaging_from(const KeyValueConfig& kv) {
  ImagingConfig c;
  if (auto v = kv.get("imaging.roi_pixels")) std::tie(c.width, c.height) = parse_dims(*v);
  c.pixel = kv.length("imaging.pixel", c.pixel);
  c.wavelength = kv.length("wavelength", c.wavelength);
  c.focal = kv.length("imaging.focal", c.focal);
  c.pupil_width = kv.length("imaging.pupil_width", c.pupil_width);
  c.pupil_samples = static_cast<int>(kv.integer("imaging.pupil_samples", c.pupil_samples));
  c.psf_halfwidth = static_cast<int>(kv.integer("imaging.psf_halfwidth", c.psf_halfwidth));
  c.beam_fwhm = kv.length("imaging.beam_fwhm", c.beam_fwhm);
  c.validate();
  return c;
}

PhaseScreen load_screen(const OpticalConfig& cfg, const ScreenSpec& spec) {
  const int given = !spec.preset.empty() + !spec.coeffs.empty() + !spec.raster.empty();
  if (given > 1) throw UsageError("give at most one of --preset, --coeffs, --raster");
  if (!spec.preset.empty()) {
    try {
      return preset_screen(cfg, spec.preset);
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }
  }
  if (!spec.coeffs.empty()) {
    std::ifstream in(spec.coeffs);
    if (!in) throw FormatError("cannot open coefficient file '" + spec.coeffs.string() + "'");
    return PhaseScreen(legendre::read_coeffs(in, spec.coeffs.string()));
  }
  if (!spec.raster.empty()) {
    PhaseRasterPart part;
    part.phase = read_grid(spec.raster);
    if (part.phase.width() < 2 || part.phase.height() < 2)
      throw FormatError(spec.raster.string() + ": raster needs at least 2x2 samples");
    const auto meta = read_grid_meta(spec.raster);
    KeyValueConfig kv;
    for (const auto& [k, v] : meta) kv.set(k, v);
    const Vec2 lower = footprint_lower(cfg), size = footprint_size(cfg);
    part.lower = {kv.length("lower_x", lower.x), kv.length("lower_y", lower.y)};
    part.step = {kv.length("step_x", size.x / (part.phase.width() - 1)),
                 kv.length("step_y", size.y / (part.phase.height() - 1))};
    return PhaseScreen(std::nullopt, std::move(part));
  }
  return PhaseScreen{};
}

CoincidenceStats load_or_accumulate(const std::filesystem::path& path, const AccumulateOptions& opts) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw FormatError("cannot open '" + path.string() + "'");
  char magic[4] = {};
  probe.read(magic, 4);
  if (probe.gcount() < 4) throw FormatError(path.string() + ": truncated header (need 4 magic bytes at offset 0)");
  probe.close();
  if (std::memcmp(magic, "PCBS", 4) == 0) return read_stats(path);
  if (std::memcmp(magic, "PCBF", 4) != 0)
    throw FormatError(path.string() + ": unknown magic at offset 0 (expected PCBF frames or PCBS stats)");
  FrameReader reader(path);
  Accumulator acc(reader.header().width, reader.header().height, opts);
  BitFrame frame(reader.header().width, reader.header().height);
  while (reader.next(frame)) acc.add(frame);
  return acc.finish();
}

}  // namespace biphoton::cli

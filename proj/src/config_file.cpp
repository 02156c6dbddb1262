#include "biphoton/config_file.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "biphoton/errors.hpp"

namespace biphoton {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_double(std::string_view text, std::string_view what) {
  text = trim(text);
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end)
    throw FormatError("invalid number '" + std::string(text) + "' for " + std::string(what));
  return value;
}

}  // namespace

double parse_length(std::string_view text) {
  text = trim(text);
  struct Unit {
    std::string_view suffix;
    double scale;
  };
  // Longest suffixes first so "mm" is not read as "m".
  static constexpr Unit units[] = {{"mm", 1e-3}, {"um", 1e-6}, {"nm", 1e-9}, {"m", 1.0}};
  for (const auto& u : units) {
    if (text.size() > u.suffix.size() && text.ends_with(u.suffix))
      return parse_double(text.substr(0, text.size() - u.suffix.size()), text) * u.scale;
  }
  return parse_double(text, text);
}

std::pair<int, int> parse_dims(std::string_view text) {
  text = trim(text);
  const auto sep = text.find_first_of("xX");
  if (sep == std::string_view::npos) throw FormatError("expected WxH, got '" + std::string(text) + "'");
  const double w = parse_double(text.substr(0, sep), text);
  const double h = parse_double(text.substr(sep + 1), text);
  if (w != std::floor(w) || h != std::floor(h)) throw FormatError("non-integer dimensions '" + std::string(text) + "'");
  return {static_cast<int>(w), static_cast<int>(h)};
}

Vec2 parse_length_pair(std::string_view text) {
  text = trim(text);
  const auto sep = text.find(',');
  if (sep == std::string_view::npos) throw FormatError("expected x,y lengths, got '" + std::string(text) + "'");
  return {parse_length(text.substr(0, sep)), parse_length(text.substr(sep + 1))};
}

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& source) {
  KeyValueConfig cfg;
  cfg.source_ = source;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos)
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = trim(view.substr(0, eq));
    const auto value = trim(view.substr(eq + 1));
    if (key.empty()) throw FormatError(source + ":" + std::to_string(lineno) + ": empty key");
    cfg.values_[std::string(key)] = std::string(value);
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file " + path.string());
  return parse(in, path.string());
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  if (auto it = values_.find(key); it != values_.end()) return it->second;
  return std::nullopt;
}

double KeyValueConfig::length(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    return parse_length(*v);
  } catch (const FormatError& e) {
    throw FormatError(source_ + ": key '" + key + "': " + e.what());
  }
}

double KeyValueConfig::number(const std::string& key, double fallback) const {
  const auto v = get(key);
  return v ? parse_double(*v, source_ + ": key '" + key + "'") : fallback;
}

long long KeyValueConfig::integer(const std::string& key, long long fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  const double d = parse_double(*v, source_ + ": key '" + key + "'");
  if (d != std::floor(d)) throw FormatError(source_ + ": key '" + key + "' must be an integer");
  return static_cast<long long>(d);
}

std::string KeyValueConfig::text(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

OpticalConfig optical_config_from(const KeyValueConfig& kv) {
  OpticalConfig cfg;
  cfg.wavelength = kv.length("wavelength", cfg.wavelength);
  cfg.f_sh = kv.length("f_sh", cfg.f_sh);
  cfg.aperture_pitch = kv.length("aperture_pitch", cfg.aperture_pitch);
  cfg.sensor_pixel = kv.length("sensor_pixel", cfg.sensor_pixel);
  if (auto v = kv.get("roi_pixels")) std::tie(cfg.roi_width, cfg.roi_height) = parse_dims(*v);
  if (auto v = kv.get("aperture_grid")) std::tie(cfg.aperture_cols, cfg.aperture_rows) = parse_dims(*v);
  if (auto v = kv.get("roi_origin")) cfg.roi_origin = parse_length_pair(*v);
  cfg.rescale_halfwidth = kv.length("rescale_halfwidth", cfg.rescale_halfwidth);
  cfg.validate();
  return cfg;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_optical_config(std::ostream& out, const OpticalConfig& cfg) {
  out << "wavelength = " << format_number(cfg.wavelength) << "m\n";
  out << "f_sh = " << format_number(cfg.f_sh) << "m\n";
  out << "aperture_pitch = " << format_number(cfg.aperture_pitch) << "m\n";
  out << "sensor_pixel = " << format_number(cfg.sensor_pixel) << "m\n";
  out << "roi_pixels = " << cfg.roi_width << "x" << cfg.roi_height << "\n";
  out << "aperture_grid = " << cfg.aperture_cols << "x" << cfg.aperture_rows << "\n";
  if (cfg.roi_origin)
    out << "roi_origin = " << format_number(cfg.roi_origin->x) << "m," << format_number(cfg.roi_origin->y) << "m\n";
  out << "rescale_halfwidth = " << format_number(cfg.rescale_halfwidth) << "m\n";
}

}  // namespace biphoton

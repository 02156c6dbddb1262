#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "biphoton/config_file.hpp"
#include "biphoton/imaging.hpp"
#include "biphoton/jpd.hpp"
#include "biphoton/screen.hpp"
#include "biphoton/simulate.hpp"

namespace biphoton::cli {

// Invalid command line or option values (exit code 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

std::string tool_version();

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// One per output directory (`manifest.txt`). Plain `key = value` lines; the
// timestamp sits alone on the last line so outputs can be compared without it.
struct Manifest {
  std::string tool;
  std::string command;
  std::vector<std::string> args;                // command line after the subcommand
  std::map<std::string, std::string> config;    // config file snapshot
  std::map<std::string, std::string> params;    // resolved parameters
  std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
  std::vector<std::pair<std::string, std::string>> outputs;  // file name, sha256
  std::string timestamp;
};

inline constexpr const char* kManifestName = "manifest.txt";

void write_manifest(const std::filesystem::path& dir, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);
// Manifest text without the timestamp line.
std::string manifest_body(const Manifest& m);

// Settings read from the shared config document beyond the geometry keys.
// Keys are looked up with the prefix; missing keys keep the base values.
DetectorModel detector_from(const KeyValueConfig& kv, const std::string& prefix = "", DetectorModel base = {});
CorrelationKernel kernel_from(const KeyValueConfig& kv);
ImagingConfig imaging_from(const KeyValueConfig& kv);

// Screen from exactly one of a preset, a coefficient file or a raster grid
// file (whose sidecar may carry lower_x/lower_y/step_x/step_y in meters;
// otherwise the raster spans the aperture footprint). None means zero phase.
struct ScreenSpec {
  std::string preset;
  std::filesystem::path coeffs;
  std::filesystem::path raster;
};
PhaseScreen load_screen(const OpticalConfig& cfg, const ScreenSpec& spec);

// Streams a frame file (`.pcbf`) through the accumulator, or loads a stats
// checkpoint (`.pcbs`), telling them apart by magic.
CoincidenceStats load_or_accumulate(const std::filesystem::path& path, const AccumulateOptions& opts);

// Entry point: args exclude the program name. Output goes to out, diagnostics
// to err; the return value is the process exit code. A config override
// replaces --config (used when replaying a manifest).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const std::optional<KeyValueConfig>& config_override = std::nullopt);

}  // namespace biphoton::cli

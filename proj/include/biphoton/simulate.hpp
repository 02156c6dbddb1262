#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "biphoton/frame_io.hpp"
#include "biphoton/geometry.hpp"
#include "biphoton/screen.hpp"
#include "biphoton/spectrum.hpp"

namespace biphoton {

using Rng = std::mt19937_64;

enum class KernelKind { gaussian, sinc2 };

struct CorrelationKernel {
  KernelKind kind = KernelKind::gaussian;
  // Pair separation at the microlens plane.
  double position_fwhm = 28e-6;
  // Single-photon spot behind one aperture (far field of the correlation).
  double spot_fwhm = 604e-6;

  void validate(const OpticalConfig& cfg) const;
};

struct DetectorModel {
  double quantum_efficiency = 0.5;
  double dark_count_prob = 0.04;
  double pairs_per_frame = 5700.0;
  double smear_prob = 0.05;
  // Per-frame multiplicative rate jitter: rate * (1 + rate_drift * (2u - 1)).
  double rate_drift = 0.0;

  void validate() const;
};

// Pixel lattice that photons are binned onto.
struct SensorGrid {
  int width = 0;
  int height = 0;
  double pixel = 0.0;
  Vec2 origin;  // center of pixel (0,0)

  static SensorGrid of(const OpticalConfig& cfg) {
    return {cfg.roi_width, cfg.roi_height, cfg.sensor_pixel, cfg.origin()};
  }
  std::optional<std::uint32_t> bin(Vec2 pos) const;
};

struct PhotonPair {
  std::optional<Vec2> first;
  std::optional<Vec2> second;
};

class PairSource {
 public:
  virtual ~PairSource() = default;
  virtual const SensorGrid& sensor() const = 0;
  virtual PhotonPair sample(Rng& rng) const = 0;
};

// O(1) draws from a fixed discrete distribution (Walker/Vose alias table).
class AliasTable {
 public:
  AliasTable() = default;
  explicit AliasTable(std::span<const double> weights);
  std::size_t sample(Rng& rng) const { return sample(prob_.data(), alias_.data(), prob_.size(), rng); }
  std::size_t size() const { return prob_.size(); }

  // Flat-array form for many small tables: writes weights.size() entries.
  // All-zero weights produce a uniform table.
  static void build(std::span<const double> weights, double* prob, std::uint32_t* alias);
  static std::size_t sample(const double* prob, const std::uint32_t* alias, std::size_t n, Rng& rng);

 private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

// Draws positions from a tabulated focal spectrum: a half-pixel cell, then a
// fine sample inside it, then uniform jitter within the fine sample. Cells
// are split into a small heavy core and the tail, sampled as an exact
// mixture, so the hot tables stay cache resident.
class SpectrumSampler {
 public:
  explicit SpectrumSampler(FocalSpectrum spectrum);
  Vec2 sample(Rng& rng) const;
  const FocalSpectrum& spectrum() const { return spectrum_; }

 private:
  FocalSpectrum spectrum_;
  int per_cell_ = 1;  // fine samples per cell per axis
  double core_mass_ = 1.0;
  std::vector<std::uint32_t> order_;  // cell ids by rank: core first, then tail
  AliasTable core_, tail_;
  std::size_t core_size_ = 0;
  std::vector<double> fine_prob_;  // indexed by rank
  std::vector<std::uint32_t> fine_alias_;
};

// Per-photon focal offset drawn from the single-photon spot profile.
class SpotSampler {
 public:
  explicit SpotSampler(const CorrelationKernel& kernel);
  Vec2 sample(Rng& rng) const;

 private:
  KernelKind kind_;
  double sigma_ = 0.0;
  // sinc^2 profile tabulated per axis on a fine lattice.
  AliasTable table_;
  double step_ = 0.0;
  double first_ = 0.0;
};

enum class PairMode { correlated, anticorrelated };

struct SourceOptions {
  SpectrumOptions spectrum;
  PairMode mode = PairMode::correlated;
  // Anti-correlated mode: pairs entering aperture A leave through the
  // aperture mirrored about this point.
  Vec2 symmetry_center;
  // Relative illumination per aperture (row-major); empty means flat.
  std::vector<double> aperture_weights;
};

// Position-correlated (or anti-correlated) biphoton source behind the
// microlens array. Centroid and separation are drawn independently.
class ShwsSource final : public PairSource {
 public:
  ShwsSource(const OpticalConfig& cfg, const PhaseScreen& screen, const CorrelationKernel& kernel,
             const SourceOptions& opts = {});

  const SensorGrid& sensor() const override { return sensor_; }
  PhotonPair sample(Rng& rng) const override;

  const FocalSpectrum& spectrum(ApertureIndex a) const;
  const OpticalConfig& config() const { return cfg_; }

 private:
  OpticalConfig cfg_;
  SensorGrid sensor_;
  CorrelationKernel kernel_;
  SourceOptions opts_;
  std::vector<int> active_;           // aperture linear indices that emit pairs
  std::vector<int> partner_;          // anti-correlated partner per aperture, -1 if none
  AliasTable aperture_table_;
  std::vector<std::optional<SpectrumSampler>> spectra_;  // by aperture linear index
  SpotSampler spot_;
  double leak_prob_;  // per axis
};

// Renders one frame: Poisson pair count, per-photon survival, binning,
// right-neighbor smear, dark counts; all contributions ORed.
void render_frame(const PairSource& source, const DetectorModel& detector, Rng& rng, BitFrame& frame);

// Seed of frame `index` for run `seed`; frames are independent of threading.
std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t index);

using FrameSink = std::function<void(std::span<const BitFrame> frames, std::uint64_t first_index)>;

// Generates n frames in chunks and hands each chunk, in order, to sink.
void simulate_frames(const PairSource& source, const DetectorModel& detector, std::uint64_t n, std::uint64_t seed,
                     const FrameSink& sink, int threads = 1, std::size_t chunk = 256);

}  // namespace biphoton

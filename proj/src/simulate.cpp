#include "biphoton/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "biphoton/errors.hpp"

namespace biphoton {

namespace {

constexpr double kFwhmPerSigma = 2.3548200450309493;  // 2 sqrt(2 ln 2)
// sinc^2(pi x / w) has FWHM 0.885893 w.
constexpr double kSinc2FwhmPerWidth = 0.8858929413789047;

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// 53 random mantissa bits; cheaper than uniform_real_distribution in the
// per-photon loops.
double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

void CorrelationKernel::validate(const OpticalConfig& cfg) const {
  if (!(position_fwhm >= 0) || !(spot_fwhm >= 0)) throw DomainError("kernel widths must be non-negative");
  if (position_fwhm >= 0.5 * cfg.aperture_pitch)
    throw DomainError("position_fwhm must be much smaller than the aperture pitch");
}

void DetectorModel::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(quantum_efficiency) || !prob(dark_count_prob) || !prob(smear_prob))
    throw DomainError("detector probabilities must lie in [0,1]");
  if (!(pairs_per_frame >= 0)) throw DomainError("pairs_per_frame must be non-negative");
  if (!prob(rate_drift)) throw DomainError("rate_drift must lie in [0,1]");
}

std::optional<std::uint32_t> SensorGrid::bin(Vec2 pos) const {
  const double fx = std::floor((pos.x - origin.x) / pixel + 0.5);
  const double fy = std::floor((pos.y - origin.y) / pixel + 0.5);
  if (!(fx >= 0) || !(fy >= 0) || fx >= width || fy >= height) return std::nullopt;
  return static_cast<std::uint32_t>(fy) * static_cast<std::uint32_t>(width) + static_cast<std::uint32_t>(fx);
}

AliasTable::AliasTable(std::span<const double> weights) {
  if (weights.empty()) throw DomainError("alias table needs at least one weight");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0)) throw DomainError("alias table weights must be non-negative");
    total += w;
  }
  if (!(total > 0)) throw DomainError("alias table weights sum to zero");
  prob_.resize(weights.size());
  alias_.resize(weights.size());
  build(weights, prob_.data(), alias_.data());
}

void AliasTable::build(std::span<const double> weights, double* prob, std::uint32_t* alias) {
  const std::size_t n = weights.size();
  double total = 0.0;
  for (double w : weights) total += w;
  std::vector<double> scaled(n);
  std::vector<std::uint32_t> small, large;
  for (std::size_t i = 0; i < n; ++i) {
    scaled[i] = total > 0 ? weights[i] * static_cast<double>(n) / total : 1.0;
    (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
  }
  while (!small.empty() && !large.empty()) {
    const auto s = small.back(), l = large.back();
    small.pop_back();
    prob[s] = scaled[s];
    alias[s] = l;
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (auto i : large) prob[i] = 1.0, alias[i] = i;
  for (auto i : small) prob[i] = 1.0, alias[i] = i;
}

std::size_t AliasTable::sample(const double* prob, const std::uint32_t* alias, std::size_t n, Rng& rng) {
  const double u = uniform01(rng) * static_cast<double>(n);
  const auto i = std::min(static_cast<std::size_t>(u), n - 1);
  return (u - static_cast<double>(i)) < prob[i] ? i : alias[i];
}

SpectrumSampler::SpectrumSampler(FocalSpectrum spectrum) : spectrum_(std::move(spectrum)) {
  const int cw = spectrum_.cells.width(), ch = spectrum_.cells.height();
  if (cw == 0 || ch == 0 || spectrum_.fine.width() % cw != 0 || spectrum_.fine.width() / cw != spectrum_.fine.height() / ch)
    throw DomainError("fine grid must subdivide the cell grid evenly");
  per_cell_ = spectrum_.fine.width() / cw;
  const auto cell_weights = spectrum_.cells.values();
  double total = 0.0;
  for (double w : cell_weights) {
    if (!(w >= 0)) throw DomainError("spectrum weights must be non-negative");
    total += w;
  }
  if (!(total > 0)) throw DomainError("spectrum has zero total weight");

  order_.resize(cell_weights.size());
  std::iota(order_.begin(), order_.end(), 0u);
  std::stable_sort(order_.begin(), order_.end(),
                   [&](std::uint32_t i, std::uint32_t j) { return cell_weights[i] > cell_weights[j]; });
  std::vector<double> sorted(order_.size());
  double core = 0.0;
  core_size_ = order_.size();
  for (std::size_t r = 0; r < order_.size(); ++r) {
    sorted[r] = cell_weights[order_[r]];
    if (core_size_ == order_.size()) {
      core += sorted[r];
      if (core >= 0.9 * total) core_size_ = r + 1;
    }
  }
  core_mass_ = core / total;
  core_ = AliasTable(std::span<const double>(sorted).first(core_size_));
  if (core_size_ < sorted.size() && std::accumulate(sorted.begin() + static_cast<std::ptrdiff_t>(core_size_), sorted.end(), 0.0) > 0)
    tail_ = AliasTable(std::span<const double>(sorted).subspan(core_size_));
  else
    core_mass_ = 1.0;

  const std::size_t k = static_cast<std::size_t>(per_cell_) * static_cast<std::size_t>(per_cell_);
  fine_prob_.resize(spectrum_.fine.size());
  fine_alias_.resize(spectrum_.fine.size());
  std::vector<double> sub(k);
  for (std::size_t r = 0; r < order_.size(); ++r) {
    const int cx = static_cast<int>(order_[r] % static_cast<std::uint32_t>(cw));
    const int cy = static_cast<int>(order_[r] / static_cast<std::uint32_t>(cw));
    for (int j = 0; j < per_cell_; ++j)
      for (int i = 0; i < per_cell_; ++i)
        sub[static_cast<std::size_t>(j * per_cell_ + i)] = spectrum_.fine(cx * per_cell_ + i, cy * per_cell_ + j);
    AliasTable::build(sub, fine_prob_.data() + r * k, fine_alias_.data() + r * k);
  }
}

Vec2 SpectrumSampler::sample(Rng& rng) const {
  const std::size_t rank =
      core_mass_ >= 1.0 || uniform01(rng) < core_mass_ ? core_.sample(rng) : core_size_ + tail_.sample(rng);
  const std::uint32_t cell = order_[rank];
  const int cw = spectrum_.cells.width();
  const std::size_t k = static_cast<std::size_t>(per_cell_) * static_cast<std::size_t>(per_cell_);
  const auto sub = AliasTable::sample(fine_prob_.data() + rank * k, fine_alias_.data() + rank * k, k, rng);
  const int i = static_cast<int>(cell % static_cast<std::uint32_t>(cw)) * per_cell_ + static_cast<int>(sub % static_cast<std::size_t>(per_cell_));
  const int j = static_cast<int>(cell / static_cast<std::uint32_t>(cw)) * per_cell_ + static_cast<int>(sub / static_cast<std::size_t>(per_cell_));
  const double s = spectrum_.fine_step;
  return spectrum_.fine_position(i, j) + Vec2{(uniform01(rng) - 0.5) * s, (uniform01(rng) - 0.5) * s};
}

SpotSampler::SpotSampler(const CorrelationKernel& kernel) : kind_(kernel.kind) {
  if (kind_ == KernelKind::gaussian) {
    sigma_ = kernel.spot_fwhm / kFwhmPerSigma;
    return;
  }
  const double width = kernel.spot_fwhm / kSinc2FwhmPerWidth;
  if (width == 0.0) return;
  // Eight side lobes each way hold all but ~1% of the power.
  const int per_lobe = 64, lobes = 8;
  step_ = width / per_lobe;
  const int n = 2 * per_lobe * lobes + 1;
  first_ = -per_lobe * lobes * step_;
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = std::numbers::pi * (first_ + i * step_) / width;
    w[i] = t == 0.0 ? 1.0 : std::pow(std::sin(t) / t, 2);
  }
  table_ = AliasTable(w);
}

Vec2 SpotSampler::sample(Rng& rng) const {
  if (kind_ == KernelKind::gaussian) {
    if (sigma_ == 0.0) return {};
    // Marsaglia polar method; both variates are used.
    double u, v, r2;
    do {
      u = 2.0 * uniform01(rng) - 1.0;
      v = 2.0 * uniform01(rng) - 1.0;
      r2 = u * u + v * v;
    } while (r2 >= 1.0 || r2 == 0.0);
    const double f = sigma_ * std::sqrt(-2.0 * std::log(r2) / r2);
    return {u * f, v * f};
  }
  if (step_ == 0.0) return {};
  auto axis = [&] {
    return first_ + static_cast<double>(table_.sample(rng)) * step_ + (uniform01(rng) - 0.5) * step_;
  };
  const double x = axis();
  return {x, axis()};
}

ShwsSource::ShwsSource(const OpticalConfig& cfg, const PhaseScreen& screen, const CorrelationKernel& kernel,
                       const SourceOptions& opts)
    : cfg_(cfg), sensor_(SensorGrid::of(cfg)), kernel_(kernel), opts_(opts), spot_(kernel),
      leak_prob_(2.0 * kernel.position_fwhm / kFwhmPerSigma / (std::sqrt(2.0 * std::numbers::pi) * cfg.aperture_pitch)) {
  cfg_.validate();
  kernel_.validate(cfg_);
  const int count = cfg_.aperture_count();
  if (!opts_.aperture_weights.empty() && static_cast<int>(opts_.aperture_weights.size()) != count)
    throw DomainError("aperture_weights must have one entry per aperture");

  partner_.assign(static_cast<std::size_t>(count), -1);
  spectra_.resize(static_cast<std::size_t>(count));
  std::vector<double> weights;
  for (int r = 0; r < cfg_.aperture_rows; ++r)
    for (int c = 0; c < cfg_.aperture_cols; ++c) {
      const ApertureIndex a{c, r};
      const int lin = aperture_linear(cfg_, a);
      const double weight = opts_.aperture_weights.empty() ? 1.0 : opts_.aperture_weights[lin];
      if (weight <= 0.0) continue;
      if (opts_.mode == PairMode::anticorrelated) {
        const Vec2 mirror = 2.0 * opts_.symmetry_center - aperture_center(cfg_, a);
        const auto b = aperture_of(cfg_, mirror);
        if (!b) continue;
        const Vec2 cb = aperture_center(cfg_, *b);
        const double tol = 1e-9 * cfg_.aperture_pitch;
        if (std::abs(cb.x - mirror.x) > tol || std::abs(cb.y - mirror.y) > tol)
          throw DomainError("symmetry center is not a symmetry point of the aperture lattice");
        partner_[lin] = aperture_linear(cfg_, *b);
        spectra_[lin].emplace(aperture_difference_spectrum(cfg_, screen, a, opts_.symmetry_center, opts_.spectrum));
      } else {
        spectra_[lin].emplace(aperture_centroid_spectrum(cfg_, screen, a, opts_.spectrum, SpectrumKind::centroid));
      }
      active_.push_back(lin);
      weights.push_back(weight);
    }
  if (active_.empty()) throw DomainError("no aperture emits pairs (check weights and symmetry center)");
  aperture_table_ = AliasTable(weights);
}

const FocalSpectrum& ShwsSource::spectrum(ApertureIndex a) const {
  if (!valid_aperture(cfg_, a)) throw DomainError("aperture outside the grid");
  const auto& s = spectra_[static_cast<std::size_t>(aperture_linear(cfg_, a))];
  if (!s) throw DomainError("aperture has no spectrum (inactive)");
  return s->spectrum();
}

PhotonPair ShwsSource::sample(Rng& rng) const {
  const int lin = active_[aperture_table_.sample(rng)];
  const ApertureIndex a{lin % cfg_.aperture_cols, lin / cfg_.aperture_cols};
  const Vec2 s = spot_.sample(rng);

  if (opts_.mode == PairMode::anticorrelated) {
    const int p = partner_[static_cast<std::size_t>(lin)];
    const Vec2 ca = aperture_center(cfg_, a);
    const Vec2 cb = aperture_center(cfg_, {p % cfg_.aperture_cols, p / cfg_.aperture_cols});
    const Vec2 d = spectra_[static_cast<std::size_t>(lin)]->sample(rng);
    return {ca + s + 0.5 * d, cb + s - 0.5 * d};
  }

  const Vec2 centroid = spectra_[static_cast<std::size_t>(lin)]->sample(rng);
  PhotonPair pair{centroid + s, std::nullopt};
  if (leak_prob_ == 0.0) {
    pair.second = centroid - s;
    return pair;
  }
  // The partner crosses an aperture edge along an axis with probability
  // leak_prob_ (entrance uniform over the cell, Gaussian separation much
  // narrower than the pitch), to either neighbor with equal odds.
  ApertureIndex b = a;
  for (int* coord : {&b.col, &b.row}) {
    const double u = uniform01(rng);
    if (u < leak_prob_) *coord += u < 0.5 * leak_prob_ ? -1 : 1;
  }
  if (!valid_aperture(cfg_, b)) return pair;
  if (b == a) {
    pair.second = centroid - s;
    return pair;
  }
  const auto& other = spectra_[static_cast<std::size_t>(aperture_linear(cfg_, b))];
  if (!other) return pair;  // partner lands on a dark aperture
  pair.second = other->sample(rng) - s;
  return pair;
}

void render_frame(const PairSource& source, const DetectorModel& detector, Rng& rng, BitFrame& frame) {
  const SensorGrid& g = source.sensor();
  if (frame.width() != g.width || frame.height() != g.height) frame = BitFrame(g.width, g.height);
  frame.clear();

  double rate = detector.pairs_per_frame;
  if (detector.rate_drift > 0) rate *= 1.0 + detector.rate_drift * (2.0 * uniform01(rng) - 1.0);
  const auto pairs = rate > 0 ? std::poisson_distribution<std::uint64_t>(rate)(rng) : 0;
  std::bernoulli_distribution survive(detector.quantum_efficiency);

  auto hit = [&](const std::optional<Vec2>& pos) {
    if (!pos || !survive(rng)) return;
    if (const auto p = g.bin(*pos)) frame.set(static_cast<int>(*p % g.width), static_cast<int>(*p / g.width));
  };
  for (std::uint64_t i = 0; i < pairs; ++i) {
    const PhotonPair pair = source.sample(rng);
    hit(pair.first);
    hit(pair.second);
  }

  if (detector.smear_prob > 0) {
    thread_local std::vector<std::uint32_t> lit;
    frame.lit_pixels(lit);
    std::bernoulli_distribution smear(detector.smear_prob);
    for (auto p : lit) {
      const int x = static_cast<int>(p % g.width), y = static_cast<int>(p / g.width);
      if (x + 1 < g.width && smear(rng)) frame.set(x + 1, y);
    }
  }

  const double dark = detector.dark_count_prob;
  const long total = static_cast<long>(g.width) * g.height;
  if (dark >= 1.0) {
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) frame.set(x, y);
  } else if (dark > 0.0) {
    // Gaps between dark pixels are geometric.
    std::geometric_distribution<long> gap(dark);
    for (long p = gap(rng); p < total; p += 1 + gap(rng))
      frame.set(static_cast<int>(p % g.width), static_cast<int>(p / g.width));
  }
}

std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t state = seed;
  const std::uint64_t base = splitmix64(state);
  state = base ^ (index * 0xD1B54A32D192ED03ull);
  return splitmix64(state);
}

void simulate_frames(const PairSource& source, const DetectorModel& detector, std::uint64_t n, std::uint64_t seed,
                     const FrameSink& sink, int threads, std::size_t chunk) {
  detector.validate();
  if (n == 0) throw DomainError("frame count must be at least 1");
  threads = std::max(1, threads);
  chunk = std::max<std::size_t>(chunk, static_cast<std::size_t>(threads));
  std::vector<BitFrame> frames(chunk, BitFrame(source.sensor().width, source.sensor().height));

  for (std::uint64_t first = 0; first < n; first += chunk) {
    const auto count = static_cast<std::size_t>(std::min<std::uint64_t>(chunk, n - first));
    auto work = [&](std::size_t t) {
      for (std::size_t i = t; i < count; i += static_cast<std::size_t>(threads)) {
        Rng rng(frame_seed(seed, first + i));
        render_frame(source, detector, rng, frames[i]);
      }
    };
    if (threads == 1) {
      work(0);
    } else {
      std::vector<std::jthread> pool;
      for (int t = 0; t < threads; ++t) pool.emplace_back(work, static_cast<std::size_t>(t));
    }
    sink(std::span<const BitFrame>(frames.data(), count), first);
  }
}

}  // namespace biphoton

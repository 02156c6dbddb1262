#include <bit>
#include <cmath>
#include <string>
#include <thread>

#include "biphoton/errors.hpp"
#include "biphoton/jpd.hpp"

namespace biphoton {

int window_pixels(double truncation_length, double pixel) {
  if (!(truncation_length > 0) || !(pixel > 0)) throw DomainError("truncation length and pixel must be positive");
  // Relative slack absorbs rounding when the truncation is an exact multiple.
  return static_cast<int>(std::floor(truncation_length / pixel * (1.0 + 1e-12)));
}

std::vector<PixelOffset> half_window_offsets(int window) {
  std::vector<PixelOffset> out;
  out.reserve(static_cast<std::size_t>(2 * window * window + 2 * window));
  for (int dx = 1; dx <= window; ++dx) out.push_back({dx, 0});
  for (int dy = 1; dy <= window; ++dy)
    for (int dx = -window; dx <= window; ++dx) out.push_back({dx, dy});
  return out;
}

int half_window_index(int dx, int dy, int window) {
  if (dy == 0) return dx >= 1 && dx <= window ? dx - 1 : -1;
  if (dy < 1 || dy > window || dx < -window || dx > window) return -1;
  return window + (dy - 1) * (2 * window + 1) + (dx + window);
}

CoincidenceStats::CoincidenceStats(int w, int h, int win, std::optional<PixelCoord> center2,
                                   std::optional<PixelCoord> post_pixel)
    : width(w), height(h), window(win), anticorr_center2(center2), postselect(post_pixel) {
  if (w < 1 || h < 1 || w > 65535 || h > 65535) throw DomainError("ROI dimensions out of range");
  if (win < 1 || win > 65535) throw DomainError("window must be at least one pixel");
  if (post_pixel && !inside(*post_pixel)) throw DomainError("postselected pixel outside the ROI");
  const auto p = static_cast<std::size_t>(pixels());
  singles.assign(p, 0);
  pairs.assign(p * static_cast<std::size_t>(offsets()), 0);
  if (center2) anticorr.assign(p * kVariants, 0);
  if (post_pixel) post.assign(p * kVariants, 0);
}

std::uint64_t CoincidenceStats::pair_count(PixelCoord a, PixelCoord b) const {
  if (!inside(a) || !inside(b)) throw DomainError("pixel outside the ROI");
  if (linear(b) < linear(a)) std::swap(a, b);
  const int k = half_window_index(b.x - a.x, b.y - a.y, window);
  if (k < 0) throw DomainError("pixel pair outside the coincidence window (or identical)");
  return pairs[static_cast<std::size_t>(linear(a)) * static_cast<std::size_t>(offsets()) + static_cast<std::size_t>(k)];
}

PixelCoord CoincidenceStats::reflect(PixelCoord p) const {
  if (!anticorr_center2) throw DomainError("anti-correlation counters were not enabled");
  return {anticorr_center2->x - p.x, anticorr_center2->y - p.y};
}

bool CoincidenceStats::compatible(const CoincidenceStats& o) const {
  return width == o.width && height == o.height && window == o.window && anticorr_center2 == o.anticorr_center2 &&
         postselect == o.postselect;
}

CoincidenceStats& CoincidenceStats::operator+=(const CoincidenceStats& o) {
  if (!compatible(o)) throw DomainError("cannot merge statistics with different ROI, window or counters");
  n_frames += o.n_frames;
  auto add = [](std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  };
  add(singles, o.singles);
  add(pairs, o.pairs);
  add(anticorr, o.anticorr);
  add(post, o.post);
  return *this;
}

CoincidenceStats merge(const CoincidenceStats& a, const CoincidenceStats& b) {
  CoincidenceStats out = a;
  out += b;
  return out;
}

Accumulator::Accumulator(int width, int height, const AccumulateOptions& opts)
    : opts_(opts), stats_(width, height, opts.window, opts.anticorr_center2, opts.postselect),
      offsets_(half_window_offsets(opts.window)) {
  block_.reserve(kBlockFrames);
}

void Accumulator::add(const BitFrame& frame) {
  if (frame.width() != stats_.width || frame.height() != stats_.height)
    throw FormatError("frame " + std::to_string(stats_.n_frames + pending_) + " has size " +
                      std::to_string(frame.width()) + "x" + std::to_string(frame.height()) + ", expected " +
                      std::to_string(stats_.width) + "x" + std::to_string(stats_.height));
  if (block_.size() <= pending_) block_.emplace_back();
  block_[pending_] = frame;
  pending_lit_ += frame.lit_count();
  if (++pending_ == kBlockFrames) flush();
}

void Accumulator::add(std::span<const BitFrame> frames) {
  for (const auto& f : frames) add(f);
}

const CoincidenceStats& Accumulator::stats() {
  flush();
  return stats_;
}

CoincidenceStats Accumulator::finish() {
  flush();
  return std::move(stats_);
}

void Accumulator::flush() {
  if (pending_ == 0) return;
  bool sparse = opts_.kernel == AccumulateKernel::lit_list;
  if (opts_.kernel == AccumulateKernel::automatic) {
    const double fill = static_cast<double>(pending_lit_) / (static_cast<double>(pending_) * stats_.pixels());
    sparse = fill < opts_.sparse_fill;
  }
  if (sparse)
    reduce_lit_list();
  else
    reduce_bit_sliced();
  stats_.n_frames += pending_;
  pending_ = 0;
  pending_lit_ = 0;
}

namespace {

// Runs body(row_begin, row_end) over `threads` contiguous row bands.
template <typename Body>
void for_row_bands(int rows, int threads, Body body) {
  threads = std::clamp(threads, 1, rows);
  if (threads == 1) {
    body(0, rows);
    return;
  }
  std::vector<std::jthread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(body, rows * t / threads, rows * (t + 1) / threads);
}

}  // namespace

void Accumulator::reduce_lit_list() {
  auto& s = stats_;
  const int w = s.width, h = s.height;
  const auto K = static_cast<std::size_t>(s.offsets());
  std::vector<std::uint32_t> lit;
  for (std::size_t f = 0; f < pending_; ++f) {
    const BitFrame& frame = block_[f];
    frame.lit_pixels(lit);
    for (auto p : lit) {
      const int x = static_cast<int>(p % static_cast<std::uint32_t>(w)), y = static_cast<int>(p / static_cast<std::uint32_t>(w));
      ++s.singles[p];
      std::uint64_t* row = s.pairs.data() + static_cast<std::size_t>(p) * K;
      for (std::size_t k = 0; k < K; ++k) {
        const int qx = x + offsets_[k].dx, qy = y + offsets_[k].dy;
        if (qx < 0 || qx >= w || qy >= h) continue;
        row[k] += frame.get(qx, qy);
      }
      auto variants = [&](PixelCoord target, std::vector<std::uint64_t>& counts) {
        for (int v = 0; v < kVariants; ++v) {
          const PixelCoord q{target.x + kVariantShift[v].dx, target.y + kVariantShift[v].dy};
          if (!s.inside(q) || (q.x == x && q.y == y)) continue;
          counts[static_cast<std::size_t>(p) * kVariants + v] += frame.get(q.x, q.y);
        }
      };
      if (s.anticorr_center2) variants(s.reflect({x, y}), s.anticorr);
      if (s.postselect) variants(*s.postselect, s.post);
    }
  }
}

void Accumulator::reduce_bit_sliced() {
  auto& s = stats_;
  const int w = s.width, h = s.height;
  const auto P = static_cast<std::size_t>(s.pixels());
  constexpr int B = kWordsPerPixel;
  const int used = static_cast<int>((pending_ + 63) / 64);

  // Transpose: bit (f % 64) of word [p][f / 64] is pixel p in frame f.
  words_.assign(P * B, 0);
  std::vector<std::uint32_t> lit;
  for (std::size_t f = 0; f < pending_; ++f) {
    block_[f].lit_pixels(lit);
    const std::uint64_t bit = 1ull << (f % 64);
    const std::size_t word = f / 64;
    for (auto p : lit) words_[static_cast<std::size_t>(p) * B + word] |= bit;
  }

  const auto K = static_cast<std::size_t>(s.offsets());
  const std::uint64_t* words = words_.data();
  auto band = [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x);
        const std::uint64_t* wp = words + p * B;
        std::uint64_t any = 0, ones = 0;
        for (int b = 0; b < used; ++b) {
          any |= wp[b];
          ones += static_cast<std::uint64_t>(std::popcount(wp[b]));
        }
        s.singles[p] += ones;
        if (!any) continue;
        auto coincidences = [&](std::size_t q) {
          const std::uint64_t* wq = words + q * B;
          std::uint64_t c = 0;
          for (int b = 0; b < B; ++b) c += static_cast<std::uint64_t>(std::popcount(wp[b] & wq[b]));
          return c;
        };
        std::uint64_t* row = s.pairs.data() + p * K;
        for (std::size_t k = 0; k < K; ++k) {
          const int qx = x + offsets_[k].dx, qy = y + offsets_[k].dy;
          if (qx < 0 || qx >= w || qy >= h) continue;
          row[k] += coincidences(static_cast<std::size_t>(qy) * static_cast<std::size_t>(w) + static_cast<std::size_t>(qx));
        }
        auto variants = [&](PixelCoord target, std::vector<std::uint64_t>& counts) {
          for (int v = 0; v < kVariants; ++v) {
            const PixelCoord q{target.x + kVariantShift[v].dx, target.y + kVariantShift[v].dy};
            if (!s.inside(q) || (q.x == x && q.y == y)) continue;
            counts[p * kVariants + v] += coincidences(static_cast<std::size_t>(s.linear(q)));
          }
        };
        if (s.anticorr_center2) variants(s.reflect({x, y}), s.anticorr);
        if (s.postselect) variants(*s.postselect, s.post);
      }
  };
  for_row_bands(h, opts_.threads, band);
}

CoincidenceStats accumulate(std::span<const BitFrame> frames, const AccumulateOptions& opts) {
  if (frames.empty()) throw DomainError("cannot accumulate an empty batch");
  Accumulator acc(frames.front().width(), frames.front().height(), opts);
  acc.add(frames);
  return acc.finish();
}

}  // namespace biphoton

#include "biphoton/jpd.hpp"

#include <algorithm>

#include "biphoton/errors.hpp"

namespace biphoton {

namespace {

using i128 = __int128;

i128 numerator(const CoincidenceStats& s, std::uint64_t joint, PixelCoord a, PixelCoord b) {
  return static_cast<i128>(s.n_frames) * static_cast<i128>(joint) -
         static_cast<i128>(s.singles[static_cast<std::size_t>(s.linear(a))]) *
             static_cast<i128>(s.singles[static_cast<std::size_t>(s.linear(b))]);
}

double finalize(i128 num, std::uint64_t n, double extra_divisor = 1.0) {
  if (n == 0) return 0.0;
  const double nn = static_cast<double>(n);
  return static_cast<double>(num) / (nn * nn * extra_divisor);
}

// Sum of numerators of a with the row-neighbors of b, and how many existed.
struct NeighborSum {
  i128 sum = 0;
  int count = 0;
};

NeighborSum row_neighbors(const CoincidenceStats& s, PixelCoord a, PixelCoord b) {
  NeighborSum out;
  for (int dy : {1, -1}) {
    const PixelCoord q{b.x, b.y + dy};
    if (!s.inside(q) || q == a) continue;
    out.sum += numerator(s, s.pair_count(a, q), a, q);
    ++out.count;
  }
  return out;
}

// Twice the (smear-corrected) covariance numerator of a pair in the window;
// doubling keeps the two-neighbor average integral.
i128 doubled_numerator(const CoincidenceStats& s, PixelCoord a, PixelCoord b, const SmearRule& rule) {
  if (rule.applies(b.x - a.x, b.y - a.y)) {
    const NeighborSum n = row_neighbors(s, a, b);
    if (n.count == 2) return n.sum;
    if (n.count == 1) return 2 * n.sum;
    throw DomainError("no neighbor row available for smear interpolation");
  }
  return 2 * numerator(s, s.pair_count(a, b), a, b);
}

int truncation(const CoincidenceStats& s, const MarginalOptions& opts) {
  const int t = opts.truncation_window < 0 ? s.window : opts.truncation_window;
  if (t > s.window) throw DomainError("truncation window exceeds the accumulated window");
  return t;
}

}  // namespace

__int128 covariance_numerator(const CoincidenceStats& s, PixelCoord a, PixelCoord b) {
  if (a == b) throw DomainError("covariance of a pixel with itself is not measurable");
  return numerator(s, s.pair_count(a, b), a, b);
}

double covariance(const CoincidenceStats& s, PixelCoord a, PixelCoord b) {
  return finalize(covariance_numerator(s, a, b), s.n_frames);
}

double smear_interpolate(const CoincidenceStats& s, PixelCoord a, PixelCoord b, const SmearRule& rule) {
  if (a == b) throw DomainError("covariance of a pixel with itself is not measurable");
  return finalize(doubled_numerator(s, a, b, rule), s.n_frames, 2.0);
}

CentroidMap centroid_marginal(const CoincidenceStats& s, const MarginalOptions& opts) {
  const int t = truncation(s, opts);
  const int w = s.width, h = s.height;
  std::vector<i128> sums(static_cast<std::size_t>(4) * w * h, 0);
  const auto offsets = half_window_offsets(s.window);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (const auto& o : offsets) {
        if (std::abs(o.dx) > t || o.dy > t) continue;
        const PixelCoord a{x, y}, b{x + o.dx, y + o.dy};
        if (!s.inside(b)) continue;
        sums[static_cast<std::size_t>(a.y + b.y) * (2 * w) + static_cast<std::size_t>(a.x + b.x)] +=
            doubled_numerator(s, a, b, opts.smear);
      }
  CentroidMap map{Grid<double>(2 * w, 2 * h, 0.0), {s.n_frames, t, false}};
  auto values = map.values.values();
  for (std::size_t i = 0; i < sums.size(); ++i) values[i] = finalize(sums[i], s.n_frames, 2.0);
  return map;
}

DifferenceMap difference_marginal(const CoincidenceStats& s, const MarginalOptions& opts) {
  const int t = truncation(s, opts);
  const int side = 2 * t + 1;
  std::vector<i128> sums(static_cast<std::size_t>(side) * side, 0);
  const auto offsets = half_window_offsets(s.window);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      for (const auto& o : offsets) {
        if (std::abs(o.dx) > t || o.dy > t) continue;
        const PixelCoord a{x, y}, b{x + o.dx, y + o.dy};
        if (!s.inside(b)) continue;
        const i128 v = doubled_numerator(s, a, b, opts.smear);
        sums[static_cast<std::size_t>(t + o.dy) * side + static_cast<std::size_t>(t + o.dx)] += v;
        sums[static_cast<std::size_t>(t - o.dy) * side + static_cast<std::size_t>(t - o.dx)] += v;
      }
  DifferenceMap map{Grid<double>(side, side, 0.0), {s.n_frames, t, false}};
  auto values = map.values.values();
  for (std::size_t i = 0; i < sums.size(); ++i) values[i] = finalize(sums[i], s.n_frames, 2.0);
  return map;
}

Grid<double> remove_background(const Grid<double>& map, int radius) {
  if (radius < 0) throw DomainError("median radius must be non-negative");
  const int w = map.width(), h = map.height();
  Grid<double> out(w, h);
  std::vector<double> window;
  window.reserve(static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      window.clear();
      for (int yy = std::max(0, y - radius); yy <= std::min(h - 1, y + radius); ++yy)
        for (int xx = std::max(0, x - radius); xx <= std::min(w - 1, x + radius); ++xx) window.push_back(map(xx, yy));
      const auto mid = window.begin() + static_cast<std::ptrdiff_t>((window.size() - 1) / 2);
      std::nth_element(window.begin(), mid, window.end());
      out(x, y) = map(x, y) - *mid;
    }
  return out;
}

Grid<double> direct_image(const CoincidenceStats& s) {
  Grid<double> out(s.width, s.height);
  const double n = static_cast<double>(s.n_frames);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      out(x, y) = s.n_frames ? static_cast<double>(s.singles[static_cast<std::size_t>(s.linear({x, y}))]) / n : 0.0;
  return out;
}

namespace {

// Covariance map of every pixel p against target(p), from variant counters.
template <typename Target>
Grid<double> variant_map(const CoincidenceStats& s, const std::vector<std::uint64_t>& counts, Target target,
                         const SmearRule& rule) {
  Grid<double> out(s.width, s.height, 0.0);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const PixelCoord p{x, y};
      const PixelCoord q = target(p);
      if (!s.inside(q) || q == p) continue;
      const auto base = static_cast<std::size_t>(s.linear(p)) * kVariants;
      auto num = [&](int v) {
        const PixelCoord r{q.x + kVariantShift[v].dx, q.y + kVariantShift[v].dy};
        return numerator(s, counts[base + static_cast<std::size_t>(v)], p, r);
      };
      auto usable = [&](int v) {
        const PixelCoord r{q.x + kVariantShift[v].dx, q.y + kVariantShift[v].dy};
        return s.inside(r) && !(r == p);
      };
      if (rule.applies(q.x - p.x, q.y - p.y)) {
        const bool up = usable(1), down = usable(2);
        if (up && down)
          out(x, y) = finalize(num(1) + num(2), s.n_frames, 2.0);
        else if (up || down)
          out(x, y) = finalize(num(up ? 1 : 2), s.n_frames);
        continue;
      }
      out(x, y) = finalize(num(0), s.n_frames);
    }
  return out;
}

}  // namespace

Grid<double> cpd(const CoincidenceStats& s, const SmearRule& rule) {
  if (!s.postselect) throw DomainError("postselection counters were not enabled at accumulation");
  const PixelCoord sel = *s.postselect;
  return variant_map(s, s.post, [&](PixelCoord) { return sel; }, rule);
}

Grid<double> anticorr_map(const CoincidenceStats& s, const SmearRule& rule) {
  if (!s.anticorr_center2) throw DomainError("anti-correlation counters were not enabled at accumulation");
  return variant_map(s, s.anticorr, [&](PixelCoord p) { return s.reflect(p); }, rule);
}

}  // namespace biphoton

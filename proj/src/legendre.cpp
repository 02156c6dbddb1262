#include "biphoton/legendre.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "biphoton/config_file.hpp"
#include "biphoton/errors.hpp"

namespace biphoton::legendre {

std::vector<Mode> modes(int max_degree) {
  if (max_degree < 1) throw DomainError("max_degree must be at least 1");
  std::vector<Mode> out;
  out.reserve(static_cast<std::size_t>((max_degree + 1) * (max_degree + 1) - 1));
  for (int m = 0; m <= max_degree; ++m)
    for (int n = 0; n <= max_degree; ++n)
      if (m != 0 || n != 0) out.push_back({m, n});
  return out;
}

LegendreCoeffs::LegendreCoeffs(int max_degree) : max_degree_(max_degree) {
  if (max_degree < 1) throw DomainError("max_degree must be at least 1");
  values_.assign(static_cast<std::size_t>((max_degree + 1) * (max_degree + 1) - 1), 0.0);
}

std::size_t LegendreCoeffs::index_of(int m, int n) const {
  if (m == 0 && n == 0) throw DomainError("the constant mode (0,0) is not part of the basis");
  if (m < 0 || n < 0 || m > max_degree_ || n > max_degree_)
    throw DomainError("mode (" + std::to_string(m) + "," + std::to_string(n) + ") outside max_degree " +
                      std::to_string(max_degree_));
  return static_cast<std::size_t>(m * (max_degree_ + 1) + n - 1);
}

double LegendreCoeffs::get(int m, int n) const { return values_[index_of(m, n)]; }
void LegendreCoeffs::set(int m, int n, double value) { values_[index_of(m, n)] = value; }

LegendreCoeffs LegendreCoeffs::operator-() const {
  LegendreCoeffs out = *this;
  for (auto& v : out.values_) v = -v;
  return out;
}

LegendreCoeffs& LegendreCoeffs::operator+=(const LegendreCoeffs& other) {
  if (other.max_degree_ > max_degree_) {
    LegendreCoeffs grown(other.max_degree_);
    for (const auto& md : modes(max_degree_)) grown.set(md.m, md.n, get(md.m, md.n));
    *this = std::move(grown);
  }
  for (const auto& md : modes(other.max_degree_)) values_[index_of(md.m, md.n)] += other.get(md.m, md.n);
  return *this;
}

double eval_L(int l, double x) {
  if (l < 0) throw DomainError("Legendre degree must be non-negative");
  if (l == 0) return 1.0;
  double prev = 1.0;
  double cur = x;
  for (int k = 1; k < l; ++k) {
    const double next = ((2 * k + 1) * x * cur - k * prev) / (k + 1);
    prev = cur;
    cur = next;
  }
  return cur;
}

double eval_mode(int m, int n, Vec2 point) { return eval_L(m, point.x) * eval_L(n, point.y); }

namespace {

// Antiderivative of L_l vanishing at -1 for l >= 1.
double antiderivative(int l, double x) {
  if (l == 0) return x;
  return (eval_L(l + 1, x) - eval_L(l - 1, x)) / (2 * l + 1);
}

}  // namespace

double integral_Lambda(int l, double a, double b) {
  if (l < 0) throw DomainError("Legendre degree must be non-negative");
  if (a < -1.0 || b > 1.0 || a > b) throw DomainError("integration bounds must satisfy -1 <= a <= b <= 1");
  return antiderivative(l, b) - antiderivative(l, a);
}

double evaluate(const LegendreCoeffs& coeffs, Vec2 point) {
  const int d = coeffs.max_degree();
  std::vector<double> lx(static_cast<std::size_t>(d + 1));
  std::vector<double> ly(static_cast<std::size_t>(d + 1));
  for (int l = 0; l <= d; ++l) {
    lx[l] = eval_L(l, point.x);
    ly[l] = eval_L(l, point.y);
  }
  double sum = 0.0;
  std::size_t i = 0;
  for (const auto& md : modes(d)) sum += coeffs[i++] * lx[md.m] * ly[md.n];
  return sum;
}

DesignRows design_row(Vec2 center, double half_width, int max_degree) {
  if (!(half_width > 0)) throw DomainError("degenerate aperture cell (half-width <= 0)");
  const double x0 = center.x - half_width, x1 = center.x + half_width;
  const double y0 = center.y - half_width, y1 = center.y + half_width;
  constexpr double slack = 1e-12;
  if (x0 < -1.0 - slack || x1 > 1.0 + slack || y0 < -1.0 - slack || y1 > 1.0 + slack)
    throw DomainError("aperture cell extends outside [-1,1]^2");

  const double norm = 1.0 / (4.0 * half_width * half_width);
  std::vector<double> dLx, dLy, Ix, Iy;
  for (int l = 0; l <= max_degree; ++l) {
    dLx.push_back(eval_L(l, x1) - eval_L(l, x0));
    dLy.push_back(eval_L(l, y1) - eval_L(l, y0));
    Ix.push_back(antiderivative(l, x1) - antiderivative(l, x0));
    Iy.push_back(antiderivative(l, y1) - antiderivative(l, y0));
  }
  DesignRows rows;
  for (const auto& md : modes(max_degree)) {
    rows.kx.push_back(norm * dLx[md.m] * Iy[md.n]);
    rows.ky.push_back(norm * Ix[md.m] * dLy[md.n]);
  }
  return rows;
}

ModalSolution solve_modal(std::span<const GradientSample> samples, int max_degree) {
  const auto mode_list = modes(max_degree);
  const auto cols = static_cast<Eigen::Index>(mode_list.size());
  const auto rows = static_cast<Eigen::Index>(2 * samples.size());
  if (rows < cols)
    throw NumericalError("modal solve needs at least " + std::to_string(cols) + " equations, got " +
                         std::to_string(rows));

  Eigen::MatrixXd A(rows, cols);
  Eigen::VectorXd b(rows);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto r = design_row(samples[s].center, samples[s].half_width, max_degree);
    const auto i = static_cast<Eigen::Index>(2 * s);
    for (Eigen::Index c = 0; c < cols; ++c) {
      A(i, c) = r.kx[c];
      A(i + 1, c) = r.ky[c];
    }
    b(i) = samples[s].kx;
    b(i + 1) = samples[s].ky;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < cols) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double tol = 1e-10 * sv(0);
    std::ostringstream msg;
    msg << "rank-deficient modal system (rank " << qr.rank() << " of " << cols << "); unresolved subspace spans modes";
    std::vector<bool> named(mode_list.size(), false);
    for (Eigen::Index k = 0; k < sv.size(); ++k) {
      if (sv(k) > tol) continue;
      const auto v = svd.matrixV().col(k);
      const double vmax = v.cwiseAbs().maxCoeff();
      for (Eigen::Index c = 0; c < cols; ++c)
        if (std::abs(v(c)) > 0.1 * vmax) named[c] = true;
    }
    for (std::size_t c = 0; c < named.size(); ++c)
      if (named[c]) msg << " (" << mode_list[c].m << "," << mode_list[c].n << ")";
    throw NumericalError(msg.str());
  }

  const Eigen::VectorXd x = qr.solve(b);
  ModalSolution out{LegendreCoeffs(max_degree), (A * x - b).norm(), static_cast<int>(rows)};
  for (Eigen::Index c = 0; c < cols; ++c) out.coeffs[static_cast<std::size_t>(c)] = x(c);
  return out;
}

double raster_coordinate(int i, int n) { return -1.0 + (2.0 * i + 1.0) / n; }

PhaseRaster rasterize(const LegendreCoeffs& coeffs, int n) {
  if (n < 2) throw DomainError("raster size must be at least 2");
  const int d = coeffs.max_degree();
  // Separable evaluation: tabulate L_l on the axis once.
  std::vector<std::vector<double>> table(static_cast<std::size_t>(d + 1), std::vector<double>(n));
  for (int l = 0; l <= d; ++l)
    for (int i = 0; i < n; ++i) table[l][i] = eval_L(l, raster_coordinate(i, n));
  PhaseRaster raster(n, n, 0.0);
  const auto mode_list = modes(d);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double sum = 0.0;
      for (std::size_t k = 0; k < mode_list.size(); ++k)
        if (coeffs[k] != 0.0) sum += coeffs[k] * table[mode_list[k].m][x] * table[mode_list[k].n][y];
      raster(x, y) = sum;
    }
  return raster;
}

double rmse_waves(const PhaseRaster& a, const PhaseRaster& b, bool exclude_tilt_and_piston) {
  if (a.width() != b.width() || a.height() != b.height()) throw DomainError("raster dimensions differ");
  const int w = a.width(), h = a.height();
  const auto count = static_cast<Eigen::Index>(a.size());
  Eigen::VectorXd diff(count);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) diff(static_cast<Eigen::Index>(y) * w + x) = a(x, y) - b(x, y);

  if (exclude_tilt_and_piston) {
    Eigen::MatrixXd basis(count, 3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto i = static_cast<Eigen::Index>(y) * w + x;
        basis(i, 0) = 1.0;
        basis(i, 1) = raster_coordinate(x, w);
        basis(i, 2) = raster_coordinate(y, h);
      }
    const Eigen::VectorXd fit = basis.colPivHouseholderQr().solve(diff);
    diff -= basis * fit;
  }
  return std::sqrt(diff.squaredNorm() / static_cast<double>(count)) / (2.0 * std::numbers::pi);
}

void write_coeffs(std::ostream& out, const LegendreCoeffs& coeffs) {
  std::size_t i = 0;
  for (const auto& md : coeffs.mode_list()) out << md.m << ' ' << md.n << ' ' << format_number(coeffs[i++]) << '\n';
}

LegendreCoeffs read_coeffs(std::istream& in, const std::string& source) {
  struct Entry {
    int m, n;
    double alpha;
  };
  std::vector<Entry> entries;
  std::string line;
  int lineno = 0;
  int max_degree = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    Entry e{};
    if (!(ls >> e.m)) continue;
    if (!(ls >> e.n >> e.alpha))
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected 'm n alpha'");
    if (e.m < 0 || e.n < 0 || (e.m == 0 && e.n == 0))
      throw FormatError(source + ":" + std::to_string(lineno) + ": invalid mode");
    max_degree = std::max({max_degree, e.m, e.n});
    entries.push_back(e);
  }
  LegendreCoeffs coeffs(max_degree);
  for (const auto& e : entries) coeffs.set(e.m, e.n, e.alpha);
  return coeffs;
}

}  // namespace biphoton::legendre

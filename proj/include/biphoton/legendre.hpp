#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "biphoton/geometry.hpp"
#include "biphoton/grid.hpp"

namespace biphoton::legendre {

struct Mode {
  int m = 0;  // degree in x
  int n = 0;  // degree in y
  friend auto operator<=>(Mode, Mode) = default;
};

// Modes 0 <= m,n <= max_degree excluding the constant (0,0), row-major in (m,n).
std::vector<Mode> modes(int max_degree);

// Modal coefficients (rad) of a phase on the normalized [-1,1]^2 domain.
class LegendreCoeffs {
 public:
  explicit LegendreCoeffs(int max_degree = 5);

  int max_degree() const { return max_degree_; }
  std::size_t size() const { return values_.size(); }

  double get(int m, int n) const;
  void set(int m, int n, double value);
  double operator[](std::size_t mode_index) const { return values_[mode_index]; }
  double& operator[](std::size_t mode_index) { return values_[mode_index]; }

  std::span<const double> values() const { return values_; }
  std::vector<Mode> mode_list() const { return modes(max_degree_); }

  LegendreCoeffs operator-() const;
  LegendreCoeffs& operator+=(const LegendreCoeffs& other);

  bool operator==(const LegendreCoeffs&) const = default;

 private:
  std::size_t index_of(int m, int n) const;

  int max_degree_;
  std::vector<double> values_;
};

// Legendre polynomial by the three-term recurrence.
double eval_L(int l, double x);
// L_m(x) * L_n(y)
double eval_mode(int m, int n, Vec2 point);
// Exact integral of L_l over [a, b], -1 <= a <= b <= 1.
double integral_Lambda(int l, double a, double b);

// Phase value of a modal expansion at a normalized point.
double evaluate(const LegendreCoeffs& coeffs, Vec2 point);

// Per-mode weights of the aperture-averaged x- and y-gradient for a square
// cell centered at `center` with half-width `half_width` (normalized units).
struct DesignRows {
  std::vector<double> kx;
  std::vector<double> ky;
};
DesignRows design_row(Vec2 center, double half_width, int max_degree = 5);

// One aperture's averaged gradient in normalized units.
struct GradientSample {
  Vec2 center;
  double half_width = 0.0;
  double kx = 0.0;
  double ky = 0.0;
};

struct ModalSolution {
  LegendreCoeffs coeffs;
  double residual = 0.0;  // ||A alpha - b||_2
  int equations = 0;
};

// Least-squares modal fit by column-pivoted Householder QR. Throws
// NumericalError when the stacked system is rank deficient, naming the modes
// that span the unresolved subspace.
ModalSolution solve_modal(std::span<const GradientSample> samples, int max_degree = 5);

// Phase samples on the n x n cell-centered grid over [-1,1]^2 (x = column).
using PhaseRaster = Grid<double>;

PhaseRaster rasterize(const LegendreCoeffs& coeffs, int n = 120);
// Cell-center coordinate of index i on an n-point raster axis.
double raster_coordinate(int i, int n);

// RMS of (a - b) in waves. With exclude_tilt_and_piston the least-squares
// fit of {1, x, y} is removed from the difference first.
double rmse_waves(const PhaseRaster& a, const PhaseRaster& b, bool exclude_tilt_and_piston);

// `m n alpha` per line, row-major order.
void write_coeffs(std::ostream& out, const LegendreCoeffs& coeffs);
LegendreCoeffs read_coeffs(std::istream& in, const std::string& source = "<coeffs>");

}  // namespace biphoton::legendre

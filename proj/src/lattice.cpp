#include "paiconv/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>

namespace paiconv {
namespace {

void require_count(std::size_t count) {
  if (count < 2) {
    throw ContractError("kernel lattice needs at least 2 points (origin + one direction), got " +
                        std::to_string(count));
  }
}

}  // namespace

KernelLattice fibonacci_lattice(std::size_t count) {
  require_count(count);
  const double golden_angle = M_PI * (3.0 - std::sqrt(5.0));
  const double sphere = static_cast<double>(count - 1);
  KernelLattice k{Matrix(count, 3)};
  for (std::size_t m = 0; m + 1 < count; ++m) {
    const double z = 1.0 - static_cast<double>(2 * m + 1) / sphere;
    const double r = std::sqrt(1.0 - z * z);
    const double theta = static_cast<double>(m) * golden_angle;
    k.points(m + 1, 0) = r * std::cos(theta);
    k.points(m + 1, 1) = r * std::sin(theta);
    k.points(m + 1, 2) = z;
  }
  return k;
}

void write_lattice(const KernelLattice& lattice, std::ostream& out) {
  const auto old = out.precision(17);
  for (std::size_t l = 0; l < lattice.count(); ++l)
    out << lattice.points(l, 0) << ' ' << lattice.points(l, 1) << ' ' << lattice.points(l, 2) << '\n';
  out.precision(old);
}

KernelLattice random_lattice(std::size_t count, Rng& rng) {
  require_count(count);
  KernelLattice k{Matrix(count, 3)};
  for (std::size_t l = 1; l < count; ++l) {
    double x, y, z, norm;
    do {
      x = rng.normal();
      y = rng.normal();
      z = rng.normal();
      norm = std::sqrt(x * x + y * y + z * z);
    } while (norm < 1e-12);
    k.points(l, 0) = x / norm;
    k.points(l, 1) = y / norm;
    k.points(l, 2) = z / norm;
  }
  return k;
}

UniformityStats uniformity_stats(const KernelLattice& lattice) {
  const std::size_t L = lattice.count();
  if (L < 3) throw ContractError("uniformity_stats: need at least two sphere points");
  const Matrix& p = lattice.points;
  std::vector<double> nearest(L - 1, std::numeric_limits<double>::infinity());
  for (std::size_t a = 1; a < L; ++a) {
    for (std::size_t b = 1; b < L; ++b) {
      if (a == b) continue;
      const double na = std::sqrt(p(a, 0) * p(a, 0) + p(a, 1) * p(a, 1) + p(a, 2) * p(a, 2));
      const double nb = std::sqrt(p(b, 0) * p(b, 0) + p(b, 1) * p(b, 1) + p(b, 2) * p(b, 2));
      const double cosang =
          (p(a, 0) * p(b, 0) + p(a, 1) * p(b, 1) + p(a, 2) * p(b, 2)) / (na * nb);
      const double angle = std::acos(std::clamp(cosang, -1.0, 1.0));
      nearest[a - 1] = std::min(nearest[a - 1], angle);
    }
  }
  UniformityStats s;
  s.min_angle = *std::min_element(nearest.begin(), nearest.end());
  s.max_angle = *std::max_element(nearest.begin(), nearest.end());
  double mean = 0.0;
  for (double v : nearest) mean += v;
  mean /= static_cast<double>(nearest.size());
  double var = 0.0;
  for (double v : nearest) var += (v - mean) * (v - mean);
  s.angle_std = std::sqrt(var / static_cast<double>(nearest.size()));
  return s;
}

}  // namespace paiconv

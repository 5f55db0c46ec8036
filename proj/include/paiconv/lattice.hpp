#pragma once

#include <cstddef>
#include <iosfwd>

#include "paiconv/numkit.hpp"
#include "paiconv/rng.hpp"

namespace paiconv {

/// Kernel points defining the canonical neighbor order: row 0 is the origin,
/// rows 1..L-1 lie on the unit sphere.
struct KernelLattice {
  Matrix points;  // L x 3

  std::size_t count() const noexcept { return points.rows(); }
};

/// Origin plus L-1 points of the golden-angle spiral with equally spaced
/// heights: z_m = 1 - (2m+1)/(L-1), theta_m = m * pi * (3 - sqrt(5)).
KernelLattice fibonacci_lattice(std::size_t count);

/// Origin plus L-1 points uniform on the sphere (normalized Gaussian draws).
KernelLattice random_lattice(std::size_t count, Rng& rng);

/// One "x y z" line per row, origin first, 17 significant digits.
void write_lattice(const KernelLattice& lattice, std::ostream& out);

struct UniformityStats {
  double min_angle = 0.0;
  double max_angle = 0.0;
  double angle_std = 0.0;
};

/// Nearest-neighbor angular distances (radians) among the sphere points,
/// i.e. ignoring the origin row. Needs at least two sphere points.
UniformityStats uniformity_stats(const KernelLattice& lattice);

}  // namespace paiconv

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "paiconv/numkit.hpp"
#include "paiconv/rng.hpp"

namespace paiconv {

/// N points with coordinates (n x 3) and optional per-point features (n x D).
struct PointCloud {
  Matrix coords;
  std::optional<Matrix> features;

  std::size_t size() const noexcept { return coords.rows(); }
  void validate() const;
};

/// Per-point neighbor table, n x k. Slot 0 is always the point itself; the
/// remaining slots are in nondecreasing distance order with ties broken by
/// lower index. When the cloud has fewer than k points the row is padded
/// with the self index.
struct NeighborIndex {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> idx;

  std::span<const std::uint32_t> row(std::size_t i) const { return {idx.data() + i * k, k}; }
  std::span<std::uint32_t> row(std::size_t i) { return {idx.data() + i * k, k}; }
  std::uint32_t operator()(std::size_t i, std::size_t j) const { return idx[i * k + j]; }

  friend bool operator==(const NeighborIndex&, const NeighborIndex&) = default;
};

/// Original indices kept by a downsampling step, ascending.
struct SampleMap {
  std::vector<std::uint32_t> kept;
  std::size_t ratio = 1;
};

NeighborIndex knn_bruteforce(const PointCloud& cloud, std::size_t k);

/// Uniform-grid accelerated KNN. Produces exactly the table knn_bruteforce
/// would: candidate rings grow until no unvisited cell can hold a closer
/// (or equally close, lower-indexed) point.
NeighborIndex knn_grid(const PointCloud& cloud, std::size_t k, double cell);

/// Keeps ceil(n / ratio) points drawn uniformly without replacement; kept
/// rows stay in their original relative order.
std::pair<PointCloud, SampleMap> random_downsample(const PointCloud& cloud, std::size_t ratio,
                                                   Rng& rng);

/// Rows of `m` selected by `rows`, in that order.
Matrix gather_rows(const Matrix& m, std::span<const std::uint32_t> rows);

}  // namespace paiconv

#include "paiconv/neighbors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "paiconv/kernels.hpp"

namespace paiconv {

void PointCloud::validate() const {
  if (coords.cols() != 3) throw ContractError("PointCloud: coords must have 3 columns");
  require_finite(coords, "point coordinates");
  if (features && features->rows() != coords.rows())
    throw ContractError("PointCloud: feature rows do not match point count");
}

NeighborIndex knn_bruteforce(const PointCloud& cloud, std::size_t k) {
  return kernels::knn(cloud.coords, k);
}

namespace {

struct Candidate {
  double d2;
  std::uint32_t idx;
  bool operator<(const Candidate& o) const noexcept {
    return d2 < o.d2 || (d2 == o.d2 && idx < o.idx);
  }
};

class Grid {
 public:
  Grid(const Matrix& coords, double cell) : cell_(cell) {
    const std::size_t n = coords.rows();
    for (int a = 0; a < 3; ++a) {
      lo_[a] = hi_[a] = coords(0, a);
      for (std::size_t i = 1; i < n; ++i) {
        lo_[a] = std::min(lo_[a], coords(i, a));
        hi_[a] = std::max(hi_[a], coords(i, a));
      }
    }
    // Keep the cell count proportional to n; a coarser grid is still exact.
    const double max_cells = 8.0 * static_cast<double>(n) + 64.0;
    for (;;) {
      double total = 1.0;
      for (int a = 0; a < 3; ++a) total *= std::floor((hi_[a] - lo_[a]) / cell_) + 1.0;
      if (total <= max_cells) break;
      cell_ *= 2.0;
    }
    for (int a = 0; a < 3; ++a)
      dims_[a] = static_cast<long>(std::floor((hi_[a] - lo_[a]) / cell_)) + 1;

    const std::size_t cells = static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
    start_.assign(cells + 1, 0);
    std::vector<std::size_t> cell_of(n);
    for (std::size_t i = 0; i < n; ++i) {
      cell_of[i] = linear(cell_coord(coords, i));
      ++start_[cell_of[i] + 1];
    }
    std::partial_sum(start_.begin(), start_.end(), start_.begin());
    members_.resize(n);
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < n; ++i)
      members_[fill[cell_of[i]]++] = static_cast<std::uint32_t>(i);
  }

  std::array<long, 3> cell_coord(const Matrix& coords, std::size_t i) const {
    std::array<long, 3> c{};
    for (int a = 0; a < 3; ++a) {
      c[a] = static_cast<long>(std::floor((coords(i, a) - lo_[a]) / cell_));
      c[a] = std::clamp(c[a], 0L, dims_[a] - 1);
    }
    return c;
  }

  std::size_t linear(const std::array<long, 3>& c) const {
    return static_cast<std::size_t>((c[2] * dims_[1] + c[1]) * dims_[0] + c[0]);
  }

  long max_ring() const { return std::max({dims_[0], dims_[1], dims_[2]}); }
  double cell() const { return cell_; }

  /// Calls fn(point) for every point in cells at Chebyshev distance exactly r.
  template <typename Fn>
  void for_each_in_ring(const std::array<long, 3>& c, long r, Fn&& fn) const {
    for (long z = c[2] - r; z <= c[2] + r; ++z) {
      if (z < 0 || z >= dims_[2]) continue;
      for (long y = c[1] - r; y <= c[1] + r; ++y) {
        if (y < 0 || y >= dims_[1]) continue;
        const bool yz_shell = std::abs(z - c[2]) == r || std::abs(y - c[1]) == r;
        for (long x = c[0] - r; x <= c[0] + r; ++x) {
          if (x < 0 || x >= dims_[0]) continue;
          if (!yz_shell && std::abs(x - c[0]) != r) continue;
          const std::size_t id = linear({x, y, z});
          for (std::size_t m = start_[id]; m < start_[id + 1]; ++m) fn(members_[m]);
        }
      }
    }
  }

 private:
  double cell_;
  std::array<double, 3> lo_{}, hi_{};
  std::array<long, 3> dims_{};
  std::vector<std::size_t> start_;
  std::vector<std::uint32_t> members_;
};

}  // namespace

NeighborIndex knn_grid(const PointCloud& cloud, std::size_t k, double cell) {
  const Matrix& coords = cloud.coords;
  const std::size_t n = coords.rows();
  if (n == 0) throw ContractError("knn_grid: empty point cloud");
  if (k == 0) throw ContractError("knn_grid: k must be >= 1");
  if (!(cell > 0.0) || !std::isfinite(cell)) throw ContractError("knn_grid: cell must be > 0");

  const Grid grid(coords, cell);
  NeighborIndex out{n, k, std::vector<std::uint32_t>(n * k)};
  const std::size_t take = std::min(k - 1, n - 1);

#pragma omp parallel
  {
    std::vector<Candidate> cand, probe;
#pragma omp for schedule(static)
    for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(n); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      cand.clear();
      const auto home = grid.cell_coord(coords, i);
      for (long r = 0; take > 0 && r <= grid.max_ring(); ++r) {
        grid.for_each_in_ring(home, r, [&](std::uint32_t j) {
          if (j != i) cand.push_back({kernels::squared_distance(coords, i, j), j});
        });
        if (cand.size() < take) continue;
        probe = cand;
        std::nth_element(probe.begin(), probe.begin() + static_cast<std::ptrdiff_t>(take - 1),
                         probe.end());
        // Unvisited points are at least r cells away along some axis.
        const double reach = static_cast<double>(r) * grid.cell() * (1.0 - 1e-9);
        if (probe[take - 1].d2 < reach * reach) break;
      }
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
      auto row = out.row(i);
      row[0] = static_cast<std::uint32_t>(i);
      for (std::size_t s = 0; s < take; ++s) row[s + 1] = cand[s].idx;
      for (std::size_t s = take + 1; s < k; ++s) row[s] = static_cast<std::uint32_t>(i);
    }
  }
  return out;
}

std::pair<PointCloud, SampleMap> random_downsample(const PointCloud& cloud, std::size_t ratio,
                                                   Rng& rng) {
  if (ratio < 1) throw ContractError("random_downsample: ratio must be >= 1");
  const std::size_t n = cloud.size();
  SampleMap map;
  map.ratio = ratio;
  map.kept.resize(n);
  std::iota(map.kept.begin(), map.kept.end(), 0u);
  if (ratio > 1) {
    rng.shuffle(map.kept);
    map.kept.resize((n + ratio - 1) / ratio);
    std::sort(map.kept.begin(), map.kept.end());
  }
  std::optional<Matrix> features;
  if (cloud.features) features = gather_rows(*cloud.features, map.kept);
  return {PointCloud{gather_rows(cloud.coords, map.kept), std::move(features)}, std::move(map)};
}

Matrix gather_rows(const Matrix& m, std::span<const std::uint32_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m.rows()) throw ContractError("gather_rows: index out of range");
    std::copy(m.row(rows[r]).begin(), m.row(rows[r]).end(), out.row(r).begin());
  }
  return out;
}

}  // namespace paiconv

#include "paiconv/bench.hpp"

#include <cmath>
#include <iostream>
#include <ostream>

#include "paiconv/kernels.hpp"
#include "paiconv/parallel.hpp"

namespace paiconv {
namespace {

PointCloud random_ball_cloud(std::size_t n, Rng& rng) {
  PointCloud cloud{Matrix(n, 3), std::nullopt};
  for (std::size_t i = 0; i < n; ++i) {
    double x, y, z;
    do {
      x = rng.uniform(-1.0, 1.0);
      y = rng.uniform(-1.0, 1.0);
      z = rng.uniform(-1.0, 1.0);
    } while (x * x + y * y + z * z > 1.0);
    cloud.coords(i, 0) = x;
    cloud.coords(i, 1) = y;
    cloud.coords(i, 2) = z;
  }
  return cloud;
}

/// Restores the previous OpenMP thread count on scope exit.
class ThreadScope {
 public:
  explicit ThreadScope(bool parallel) : saved_(thread_count()) {
    if (!parallel) set_threads(1);
  }
  ~ThreadScope() { set_threads(saved_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  int saved_;
};

}  // namespace

Matrix linear_correlation_weights(const Matrix& local, const Matrix& kernel, double sigma) {
  if (!(sigma > 0.0)) throw ContractError("linear_correlation_weights: sigma must be > 0");
  const std::size_t rows = local.rows();
  const std::size_t L = kernel.rows();
  Matrix w(rows, L);
#pragma omp parallel for schedule(static)
  for (std::int64_t rr = 0; rr < static_cast<std::int64_t>(rows); ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const auto p = local.row(r);
    auto out = w.row(r);
    for (std::size_t l = 0; l < L; ++l) {
      const double dx = p[0] - sigma * kernel(l, 0);
      const double dy = p[1] - sigma * kernel(l, 1);
      const double dz = p[2] - sigma * kernel(l, 2);
      out[l] = std::max(0.0, 1.0 - std::sqrt(dx * dx + dy * dy + dz * dz) / sigma);
    }
  }
  return w;
}

std::vector<BenchReport> bench_permutation(const PermutationBenchOptions& o) {
  if (o.repeats < kMinBenchRepeats)
    throw ContractError("bench_permutation: repeats must be >= " + std::to_string(kMinBenchRepeats));
  if (o.n == 0 || o.K == 0 || o.L < 2) throw ContractError("bench_permutation: bad sizes");
  ThreadScope threads(o.parallel);

  Rng rng = Rng(o.seed).stream(Stream::kData);
  const PointCloud cloud = random_ball_cloud(o.n, rng);
  const NeighborIndex nbr = knn_grid(cloud, o.K, 2.0 * std::cbrt(static_cast<double>(o.K) / o.n));
  const Matrix local = local_positions(cloud, nbr);
  const Matrix kernel = fibonacci_lattice(o.L).points;

  double sigma = o.sigma;
  if (!(sigma > 0.0)) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < local.rows(); ++r) {
      if (r % o.K == 0) continue;
      const auto p = local.row(r);
      sum += std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      ++count;
    }
    sigma = count ? sum / static_cast<double>(count) : 1.0;
    if (!(sigma > 0.0)) sigma = 1.0;
  }

  const std::size_t table_bytes = local.rows() * o.L * sizeof(double);
  std::vector<BenchReport> out;
  {
    Matrix logits, weights;
    const double t = median_time_ns(o.repeats, [&] {
      kernels::permutation_forward(local, o.K, kernel, Normalizer::kSparsemax, logits, weights);
    });
    out.push_back({"dot_product_sparsemax", o.n, o.K, o.L, o.repeats, t, 0,
                   local.bytes() + 2 * table_bytes, thread_count()});
  }
  {
    Matrix weights;
    const double t = median_time_ns(o.repeats, [&] {
      weights = linear_correlation_weights(local, kernel, sigma);
    });
    out.push_back({"linear_correlation", o.n, o.K, o.L, o.repeats, t, 0,
                   local.bytes() + table_bytes, thread_count()});
  }
  return out;
}

std::size_t estimate_working_set(const ClassifierConfig& c, std::size_t n) {
  constexpr std::size_t d = sizeof(double);
  constexpr std::size_t u = sizeof(std::uint32_t);
  const std::size_t K = c.neighbors, L = c.kernel_points, dr = c.position_width;
  const bool iso = c.variant == Variant::kIsotropic;
  std::size_t bytes = 0;

  auto geometry = [&](std::size_t m) {
    return m * 3 * d + m * u + m * K * u + m * K * 3 * d + 2 * m * K * L * d;
  };
  std::vector<std::size_t> points;
  std::size_t m = n;
  for (std::size_t s = 0; s < c.conv_channels.size(); ++s) {
    if (!c.downsample_ratios.empty()) {
      m = (m + c.downsample_ratios[s] - 1) / c.downsample_ratios[s];
      bytes += geometry(m);
    }
    points.push_back(m);
  }
  if (c.downsample_ratios.empty()) bytes += geometry(n);
  const std::size_t n_final = points.back();

  std::size_t feature = 0, concat = 0;
  for (std::size_t s = 0; s < c.conv_channels.size(); ++s) {
    const std::size_t ms = points[s], din = dr + feature, dout = c.conv_channels[s];
    bytes += ms * K * 7 * d + ms * K * dr * d + ms * K * din * d + ms * L * din * d +
             (iso ? ms * din * d : 0) + 2 * ms * dout * d + n_final * u;
    feature = dout;
    concat += dout;
  }
  const std::size_t A = c.aggregate_width;
  bytes += n_final * concat * d + 2 * n_final * A * d + (c.pooling != Pooling::kSum ? A * u : 0) +
           c.pooled_width() * d;
  std::size_t in = c.pooled_width();
  for (std::size_t w : c.fc_widths) {
    bytes += in * d + w * d;
    in = w;
  }
  bytes += c.num_classes() * d;
  return bytes;
}

MaxPointsResult max_points_probe(const ClassifierConfig& config, std::size_t budget_bytes) {
  config.validate();
  MaxPointsResult r;
  if (estimate_working_set(config, 1) > budget_bytes) {
    std::cerr << "warning: budget of " << budget_bytes
              << " bytes is below the footprint of a single point\n";
    return r;
  }
  std::size_t n = 1;
  while (n < kMaxPointsProbeCap && estimate_working_set(config, 2 * n) <= budget_bytes) n *= 2;
  r.max_points = n;
  r.saturated = n >= kMaxPointsProbeCap;
  return r;
}

BenchReport bench_network(const ClassifierConfig& config, std::size_t n, std::size_t repeats,
                          std::uint64_t seed) {
  Rng rng(seed);
  ClassifierState state = build(config, rng);
  Rng data_rng = rng.stream(Stream::kData);
  const PointCloud cloud = random_ball_cloud(n, data_rng);
  std::size_t bytes = 0;
  const double t = median_time_ns(repeats, [&] {
    Rng r(seed);
    const ClassifierTape tape = forward_logits(state, cloud, r);
    backward(state, tape, cross_entropy(tape.logits, 0).d_logits);
    bytes = tape.bytes();
  });
  return {"network_forward_backward", n, config.neighbors, config.kernel_points, repeats, t,
          count_params(state), bytes, thread_count()};
}

void write_bench_csv(const std::vector<BenchReport>& rows, std::ostream& out) {
  out << "op,n,K,L,repeats,median_ns,params,working_set_bytes,threads\n";
  for (const auto& r : rows) {
    out << r.op << ',' << r.n << ',' << r.K << ',' << r.L << ',' << r.repeats << ','
        << static_cast<std::uint64_t>(r.median_ns) << ',' << r.params << ',' << r.working_set_bytes
        << ',' << r.threads << '\n';
  }
}

}  // namespace paiconv

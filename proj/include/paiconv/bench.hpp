#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "paiconv/netcls.hpp"

namespace paiconv {

struct BenchReport {
  std::string op;
  std::size_t n = 0;
  std::size_t K = 0;
  std::size_t L = 0;
  std::size_t repeats = 0;
  double median_ns = 0.0;
  std::size_t params = 0;
  std::size_t working_set_bytes = 0;
  int threads = 1;
};

inline constexpr std::size_t kMinBenchRepeats = 5;

struct PermutationBenchOptions {
  std::size_t n = 10000;
  std::size_t K = 16;
  std::size_t L = 16;
  std::size_t repeats = 9;
  double sigma = 0.0;  // <= 0: mean neighbor distance of the generated cloud
  std::uint64_t seed = 0;
  bool parallel = false;
};

/// Times soft-permutation construction (dot product + sparsemax) against a
/// linear-correlation weighting w_jl = max(0, 1 - |p~_j - sigma k_l| / sigma)
/// on the same random cloud and neighbor table. Returns one report per
/// method: "dot_product_sparsemax" and "linear_correlation".
std::vector<BenchReport> bench_permutation(const PermutationBenchOptions& options);

/// Linear-correlation kernel weights, (n*K) x L.
Matrix linear_correlation_weights(const Matrix& local, const Matrix& kernel, double sigma);

/// Analytic bytes held by one forward tape for an n-point cloud.
std::size_t estimate_working_set(const ClassifierConfig& config, std::size_t n);

struct MaxPointsResult {
  std::size_t max_points = 0;
  bool saturated = false;  // hit the probe cap
};

inline constexpr std::size_t kMaxPointsProbeCap = std::size_t{1} << 30;

/// Doubles n until the estimated working set exceeds the budget and reports
/// the largest n that fit. Nothing is allocated.
MaxPointsResult max_points_probe(const ClassifierConfig& config, std::size_t budget_bytes);

/// Timed single-cloud forward+backward pass of a network.
BenchReport bench_network(const ClassifierConfig& config, std::size_t n, std::size_t repeats,
                          std::uint64_t seed);

/// op,n,K,L,repeats,median_ns,params,working_set_bytes,threads
void write_bench_csv(const std::vector<BenchReport>& rows, std::ostream& out);

/// Median wall time in nanoseconds of `repeats` calls after one warm-up.
template <typename Fn>
double median_time_ns(std::size_t repeats, Fn&& fn);

}  // namespace paiconv

#include "paiconv/bench_timing.hpp"

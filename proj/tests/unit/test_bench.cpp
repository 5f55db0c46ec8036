#include <gtest/gtest.h>

#include <sstream>

#include "paiconv/bench.hpp"
#include "paiconv/lattice.hpp"

using namespace paiconv;

namespace {

ClassifierConfig small() {
  ClassifierConfig c = ClassifierConfig::desk(3);
  c.neighbors = 8;
  c.kernel_points = 8;
  return c;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

TEST(BenchPermutation, TooFewRepeatsRejected) {
  PermutationBenchOptions o;
  o.n = 100;
  o.repeats = kMinBenchRepeats - 1;
  EXPECT_THROW(bench_permutation(o), ContractError);
  EXPECT_THROW(bench_network(small(), 32, 4, 0), ContractError);
}

TEST(BenchPermutation, TwoMethodsAndCsvShape) {
  PermutationBenchOptions o;
  o.n = 200;
  o.repeats = 5;
  const auto rows = bench_permutation(o);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].op, "dot_product_sparsemax");
  EXPECT_EQ(rows[1].op, "linear_correlation");
  for (const auto& r : rows) {
    EXPECT_EQ(r.n, 200u);
    EXPECT_GT(r.median_ns, 0.0);
  }
  std::ostringstream out;
  write_bench_csv(rows, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "op,n,K,L,repeats,median_ns,params,working_set_bytes,threads");
  int data = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(split_csv(line).size(), 9u);
    ++data;
  }
  EXPECT_EQ(data, 2);
}

TEST(LinearCorrelation, HandValuesAndSigmaGuard) {
  const Matrix kernel = Matrix::from_rows({{0, 0, 0}, {1, 0, 0}});
  const Matrix local = Matrix::from_rows({{0, 0, 0}, {0.25, 0, 0}, {3, 0, 0}});
  const Matrix w = linear_correlation_weights(local, kernel, 0.5);
  EXPECT_EQ(w(0, 0), 1.0);
  EXPECT_EQ(w(0, 1), 0.0);
  EXPECT_NEAR(w(1, 0), 0.5, 1e-15);
  EXPECT_NEAR(w(1, 1), 0.5, 1e-15);
  EXPECT_EQ(w(2, 0), 0.0);
  EXPECT_EQ(w(2, 1), 0.0);
  EXPECT_THROW(linear_correlation_weights(local, kernel, 0.0), ContractError);
  EXPECT_THROW(linear_correlation_weights(local, kernel, -1.0), ContractError);
}

TEST(MaxPointsProbe, MonotoneInBudget) {
  const ClassifierConfig c = small();
  std::size_t prev = 0;
  for (std::size_t mib : {1u, 2u, 4u, 8u, 16u, 64u}) {
    const MaxPointsResult r = max_points_probe(c, mib << 20);
    EXPECT_GE(r.max_points, prev);
    EXPECT_LE(estimate_working_set(c, r.max_points), mib << 20);
    EXPECT_GT(estimate_working_set(c, 2 * r.max_points), mib << 20);
    prev = r.max_points;
  }
}

TEST(MaxPointsProbe, TinyBudgetWarnsAndReturnsZero) {
  testing::internal::CaptureStderr();
  const MaxPointsResult r = max_points_probe(small(), 16);
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(r.max_points, 0u);
  EXPECT_NE(err.find("warning"), std::string::npos);
}

TEST(WorkingSet, EstimateWithinFactorTwoOfTape) {
  for (Variant v : {Variant::kFull, Variant::kIsotropic}) {
    for (bool downsample : {false, true}) {
      ClassifierConfig c = small();
      c.variant = v;
      c.pooling = Pooling::kMaxAndSum;
      if (downsample) c.downsample_ratios = {2, 2, 1};
      const BenchReport r = bench_network(c, 300, kMinBenchRepeats, 1);
      const double est = static_cast<double>(estimate_working_set(c, 300));
      EXPECT_LE(est, 2.0 * static_cast<double>(r.working_set_bytes));
      EXPECT_GE(est, 0.5 * static_cast<double>(r.working_set_bytes));
    }
  }
}

TEST(ParamCount, IsotropicDropsKernelSlotWeights) {
  ClassifierConfig c = small();
  Rng a(2), b(2);
  const std::size_t full = count_params(build(c, a));
  c.variant = Variant::kIsotropic;
  const std::size_t iso = count_params(build(c, b));
  // Each conv weight shrinks from (L*d_in) x d_out to d_in x d_out.
  std::size_t want = 0, prev = 0;
  for (std::size_t out : c.conv_channels) {
    const std::size_t din = c.position_width + prev;
    want += (c.kernel_points - 1) * din * out;
    prev = out;
  }
  EXPECT_EQ(full - iso, want);
}

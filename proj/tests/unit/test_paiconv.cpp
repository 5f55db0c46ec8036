#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "oracles.hpp"
#include "paiconv/paiconv.hpp"

using namespace paiconv;

namespace {

PointCloud ball_cloud(std::size_t n, Rng& rng, std::size_t feature_width = 0) {
  PointCloud c{Matrix(n, 3), std::nullopt};
  for (std::size_t i = 0; i < n; ++i) {
    double x, y, z;
    do {
      x = rng.uniform(-1, 1);
      y = rng.uniform(-1, 1);
      z = rng.uniform(-1, 1);
    } while (x * x + y * y + z * z > 1.0);
    c.coords(i, 0) = x;
    c.coords(i, 1) = y;
    c.coords(i, 2) = z;
  }
  if (feature_width) {
    c.features = Matrix(n, feature_width);
    for (double& v : c.features->data()) v = rng.uniform(-1, 1);
  }
  return c;
}

void fill_uniform(Matrix& m, Rng& rng, double scale = 1.0) {
  for (double& v : m.data()) v = scale * rng.uniform(-1, 1);
}

std::shared_ptr<const PermutationTensor> permutation_for(const PointCloud& c, const NeighborIndex& nbr,
                                                         const Matrix& kernel, Normalizer mode) {
  return std::make_shared<const PermutationTensor>(
      build_permutation(local_positions(c, nbr), nbr.k, kernel, mode));
}

// Shuffles slots 1..K-1 of every row.
NeighborIndex shuffle_slots(NeighborIndex nbr, Rng& rng) {
  for (std::size_t i = 0; i < nbr.n; ++i) {
    auto row = nbr.row(i);
    for (std::size_t s = nbr.k - 1; s > 1; --s) std::swap(row[s], row[1 + rng.below(s)]);
  }
  return nbr;
}

}  // namespace

TEST(LocalPositions, SelfRowZeroAndCenterMinusNeighbor) {
  const PointCloud c{Matrix::from_rows({{1, 0, 0}, {0, 0, 0}}), std::nullopt};
  const NeighborIndex nbr = knn_bruteforce(c, 2);
  const Matrix local = local_positions(c, nbr);
  EXPECT_EQ(local, Matrix::from_rows({{0, 0, 0}, {1, 0, 0}, {0, 0, 0}, {-1, 0, 0}}));
}

TEST(LocalPositions, TranslationLeavesPermutationUnchanged) {
  Rng rng(1);
  PointCloud c = ball_cloud(50, rng);
  const NeighborIndex nbr = knn_bruteforce(c, 8);
  const Matrix kernel = fibonacci_lattice(8).points;
  const auto before = build_permutation(local_positions(c, nbr), 8, kernel, Normalizer::kSparsemax);
  // Power-of-two offsets keep the subtraction exact.
  for (std::size_t i = 0; i < 50; ++i) c.coords(i, 0) += 4.0;
  const auto after = build_permutation(local_positions(c, nbr), 8, kernel, Normalizer::kSparsemax);
  EXPECT_LT(oracle::max_abs_diff(before.weights, after.weights), 1e-14);
}

TEST(BuildPermutation, ColumnStochasticWithCenterIndicator) {
  Rng rng(2);
  for (Normalizer mode : {Normalizer::kSparsemax, Normalizer::kSoftmax, Normalizer::kOrderOneHot,
                          Normalizer::kUniform}) {
    const PointCloud c = ball_cloud(60, rng);
    const NeighborIndex nbr = knn_bruteforce(c, 10);
    const auto M = build_permutation(local_positions(c, nbr), 10, fibonacci_lattice(12).points, mode);
    for (std::size_t i = 0; i < 60; ++i) {
      for (std::size_t l = 0; l < 12; ++l) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 10; ++j) {
          const double w = M.weights(i * 10 + j, l);
          EXPECT_GE(w, 0.0);
          EXPECT_LE(w, 1.0);
          sum += w;
          if (mode == Normalizer::kUniform) {
            EXPECT_EQ(w, 0.1);
          } else if (l == 0) {
            EXPECT_EQ(w, j == 0 ? 1.0 : 0.0);
          }
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
    }
  }
}

TEST(BuildPermutation, AlignedNeighborTakesTheColumn) {
  const Matrix kernel = fibonacci_lattice(4).points;
  // Center at origin; neighbor 1 sits at -k_2 so that p~ = p_i - p_j = k_2.
  Matrix coords(4, 3);
  for (std::size_t a = 0; a < 3; ++a) coords(1, a) = -kernel(2, a);
  coords(2, 0) = kernel(2, 1);  // orthogonal to k_2 in the xy plane
  coords(2, 1) = -kernel(2, 0);
  for (std::size_t a = 0; a < 3; ++a) coords(3, a) = kernel(2, a);  // opposed
  const Matrix local = local_positions(PointCloud{coords, std::nullopt},
                                       NeighborIndex{4, 4, {0, 1, 2, 3, 1, 0, 2, 3, 2, 0, 1, 3, 3, 0, 1, 2}});
  const auto M = build_permutation(local, 4, kernel, Normalizer::kSparsemax);
  // Logits for column 2 at point 0: (0, 1, ~0, -1) -> sparsemax one-hot on slot 1.
  EXPECT_NEAR(M.weights(1, 2), 1.0, 1e-12);
  EXPECT_EQ(M.weights(0, 2), 0.0);
  EXPECT_EQ(M.weights(2, 2), 0.0);
  EXPECT_EQ(M.weights(3, 2), 0.0);
}

TEST(BuildPermutation, CoincidentNeighborsGiveUniformColumns) {
  const Matrix coords(5, 3, 0.25);
  const NeighborIndex nbr = knn_bruteforce(PointCloud{coords, std::nullopt}, 5);
  const auto M = build_permutation(local_positions(PointCloud{coords, std::nullopt}, nbr), 5,
                                   fibonacci_lattice(6).points, Normalizer::kSparsemax);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_EQ(M.weights(i * 5 + j, 0), j == 0 ? 1.0 : 0.0);
      for (std::size_t l = 1; l < 6; ++l) EXPECT_NEAR(M.weights(i * 5 + j, l), 0.2, 1e-15);
    }
}

TEST(BuildPermutation, BetterAlignedNeighborDominates) {
  // Two neighbors at small angles to k_1; the closer-aligned one gets more weight.
  const Matrix kernel = Matrix::from_rows({{0, 0, 0}, {1, 0, 0}});
  const Matrix local = Matrix::from_rows({{0, 0, 0}, {0.95, 0.1, 0}, {0.8, 0.5, 0}});
  const auto M = build_permutation(local, 3, kernel, Normalizer::kSparsemax);
  EXPECT_GT(M.weights(1, 1), M.weights(2, 1));
  EXPECT_NEAR(M.weights(1, 1), 0.5 + (0.95 - 0.8) / 2, 1e-12);
  EXPECT_NEAR(M.weights(1, 1) + M.weights(2, 1), 1.0, 1e-12);
}

TEST(BuildPermutation, RawModeKeepsLogits) {
  Rng rng(3);
  const PointCloud c = ball_cloud(20, rng);
  const NeighborIndex nbr = knn_bruteforce(c, 5);
  const Matrix local = local_positions(c, nbr);
  const Matrix kernel = fibonacci_lattice(6).points;
  const auto M = build_permutation(local, 5, kernel, Normalizer::kRaw);
  const Matrix z = oracle::naive_matmul(local, transpose(kernel));
  for (std::size_t r = 0; r < z.rows(); ++r)
    for (std::size_t l = 1; l < 6; ++l) EXPECT_NEAR(M.weights(r, l), z(r, l), 1e-15);
}

TEST(BuildPermutation, OrderOneHotPicksSlotByColumn) {
  Rng rng(4);
  const PointCloud c = ball_cloud(10, rng);
  const NeighborIndex nbr = knn_bruteforce(c, 3);
  const auto M = build_permutation(local_positions(c, nbr), 3, fibonacci_lattice(5).points,
                                   Normalizer::kOrderOneHot);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t l = 0; l < 5; ++l)
      for (std::size_t j = 0; j < 3; ++j)
        EXPECT_EQ(M.weights(i * 3 + j, l), j == std::min<std::size_t>(l, 2) ? 1.0 : 0.0);
}

TEST(BuildPermutation, SparsemaxSparserThanSoftmax) {
  Rng rng(5);
  const Matrix kernel = fibonacci_lattice(32).points;
  double nonzero = 0.0, total = 0.0;
  for (int t = 0; t < 5; ++t) {
    const PointCloud c = ball_cloud(256, rng);
    const NeighborIndex nbr = knn_bruteforce(c, 40);
    const Matrix local = local_positions(c, nbr);
    const auto sm = build_permutation(local, 40, kernel, Normalizer::kSparsemax);
    const auto so = build_permutation(local, 40, kernel, Normalizer::kSoftmax);
    for (std::size_t r = 0; r < sm.weights.rows(); ++r)
      for (std::size_t l = 1; l < 32; ++l) {
        nonzero += sm.weights(r, l) > 0.0;
        total += 1.0;
        EXPECT_GT(so.weights(r, l), 0.0);
      }
  }
  EXPECT_LT(nonzero / total, 0.5);
}

TEST(PermutationBackward, ColumnZeroLogitsGetNoGradient) {
  Rng rng(6);
  const PointCloud c = ball_cloud(20, rng);
  const NeighborIndex nbr = knn_bruteforce(c, 6);
  const Matrix kernel = fibonacci_lattice(7).points;
  for (Normalizer mode : {Normalizer::kSparsemax, Normalizer::kSoftmax, Normalizer::kRaw}) {
    const auto M = build_permutation(local_positions(c, nbr), 6, kernel, mode);
    Matrix dW(M.weights.rows(), 7);
    fill_uniform(dW, rng);
    const Matrix dz = kernels::permutation_logit_grad(6, mode, M.weights, dW);
    for (std::size_t r = 0; r < dz.rows(); ++r) EXPECT_EQ(dz(r, 0), 0.0);
  }
}

TEST(EncodePosition, SelfPairInputAndZeroWeights) {
  Rng rng(7);
  const PointCloud c = ball_cloud(12, rng);
  const NeighborIndex nbr = knn_bruteforce(c, 4);
  PositionMlp mlp{Param("w", Matrix(7, 5)), Param("b", Matrix(1, 5))};
  PositionTape tape;
  const Matrix code = encode_position(c, nbr, mlp, &tape);
  for (double v : code.data()) EXPECT_EQ(v, 0.0);
  for (std::size_t i = 0; i < 12; ++i) {
    const auto row = tape.input.row(i * 4);
    for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(row[a], c.coords(i, a));
    for (std::size_t a = 3; a < 7; ++a) EXPECT_EQ(row[a], 0.0);
    const auto other = tape.input.row(i * 4 + 2);
    const std::size_t q = nbr(i, 2);
    double sq = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      EXPECT_EQ(other[3 + a], c.coords(i, a) - c.coords(q, a));
      sq += other[3 + a] * other[3 + a];
    }
    EXPECT_NEAR(other[6], std::sqrt(sq), 1e-15);
  }
}

TEST(EncodePosition, RejectsWrongInputWidth) {
  Rng rng(8);
  const PointCloud c = ball_cloud(5, rng);
  PositionMlp mlp{Param("w", Matrix(6, 2)), Param("b", Matrix(1, 2))};
  EXPECT_THROW(encode_position(c, knn_bruteforce(c, 2), mlp), ContractError);
}

TEST(EncodePosition, WeightGradientMatchesFiniteDifferences) {
  Rng rng(9);
  const PointCloud c = ball_cloud(10, rng);
  const NeighborIndex nbr = knn_bruteforce(c, 4);
  PositionMlp mlp{Param("w", Matrix(7, 3)), Param("b", Matrix(1, 3))};
  fill_uniform(mlp.weight.value, rng);
  fill_uniform(mlp.bias.value, rng, 0.3);
  Matrix R(40, 3);
  fill_uniform(R, rng);
  auto loss = [&] {
    const Matrix code = encode_position(c, nbr, mlp);
    double s = 0.0;
    for (std::size_t k = 0; k < code.size(); ++k) s += code.data()[k] * R.data()[k];
    return s;
  };
  PositionTape tape;
  encode_position(c, nbr, mlp, &tape);
  encode_position_backward(mlp, tape, R);
  const double h = 1e-6;
  for (Param* p : {&mlp.weight, &mlp.bias}) {
    for (std::size_t k = 0; k < p->size(); ++k) {
      const double keep = p->value.data()[k];
      p->value.data()[k] = keep + h;
      const double up = loss();
      p->value.data()[k] = keep - h;
      const double down = loss();
      p->value.data()[k] = keep;
      EXPECT_LT(oracle::rel_err(p->grad.data()[k], (up - down) / (2 * h), 1e-6), 1e-5) << p->name << k;
    }
  }
}

TEST(AssembleFeatures, ConcatenatesCodeThenGatheredFeatures) {
  const Matrix coords = Matrix::from_rows({{0, 0, 0}, {1, 0, 0}, {3, 0, 0}});
  const NeighborIndex nbr = knn_bruteforce(PointCloud{coords, std::nullopt}, 2);
  Matrix code(6, 1);
  for (std::size_t r = 0; r < 6; ++r) code(r, 0) = 100.0 + static_cast<double>(r);
  const Matrix f = Matrix::from_rows({{10, 11}, {20, 21}, {30, 31}});
  const Matrix X = assemble_features(code, &f, nbr);
  ASSERT_EQ(X.cols(), 3u);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_EQ(X(i * 2 + j, 0), code(i * 2 + j, 0));
      EXPECT_EQ(X(i * 2 + j, 1), f(nbr(i, j), 0));
      EXPECT_EQ(X(i * 2 + j, 2), f(nbr(i, j), 1));
    }
  // No features: X is the code. No code: X is the gathered features.
  EXPECT_EQ(assemble_features(code, nullptr, nbr), code);
  const Matrix only_f = assemble_features(Matrix(6, 0), &f, nbr);
  EXPECT_EQ(only_f(1, 0), f(nbr(0, 1), 0));
  EXPECT_THROW(assemble_features(Matrix(5, 1), &f, nbr), ContractError);
  EXPECT_THROW(assemble_features(code, &code, nbr), ContractError);
}

TEST(PaiConvApply, ZeroWeightsGiveEluOfBias) {
  Rng rng(10);
  const PointCloud c = ball_cloud(15, rng);
  const NeighborIndex nbr = knn_bruteforce(c, 4);
  PaiConvLayer layer("l", 0, 3, 5, 4, true, rng);
  layer.weight.value.fill(0.0);
  layer.bias.value = Matrix::from_rows({{-0.5, 0.0, 2.0}});
  LayerTape tape;
  const Matrix Y = layer.forward(c, nbr, permutation_for(c, nbr, fibonacci_lattice(5).points,
                                                         Normalizer::kSparsemax), tape);
  for (std::size_t i = 0; i < 15; ++i) {
    EXPECT_EQ(Y(i, 0), elu(-0.5));
    EXPECT_EQ(Y(i, 1), 0.0);
    EXPECT_EQ(Y(i, 2), 2.0);
  }
}

TEST(PaiConvApply, SinglePointHandEvaluation) {
  Rng rng(11);
  // n=1, K=1, L=2, d_in=1 (no position code), d_out=1.
  PaiConvLayer layer("l", 1, 1, 2, 0, true, rng);
  layer.weight.value = Matrix::from_rows({{0.3}, {-0.7}});
  layer.bias.value = Matrix::from_rows({{0.1}});
  auto M = std::make_shared<PermutationTensor>();
  M->n = 1;
  M->K = 1;
  M->L = 2;
  M->weights = Matrix::from_rows({{1.0, 1.0}});
  LayerTape tape;
  const double x = 0.9;
  const Matrix Y = layer.apply(Matrix::from_rows({{x}}), M, tape);
  EXPECT_NEAR(Y(0, 0), elu(x * (0.3 - 0.7) + 0.1), 1e-15);
}

TEST(PaiConvApply, VecIsKernelSlotMajor) {
  Rng rng(12);
  PaiConvLayer layer("l", 2, 1, 3, 0, true, rng);
  // Point with K=2 neighbors, d_in=2, L=3.
  const Matrix X = Matrix::from_rows({{1, 2}, {3, 4}});
  auto M = std::make_shared<PermutationTensor>();
  M->n = 1;
  M->K = 2;
  M->L = 3;
  M->weights = Matrix::from_rows({{1, 0, 0.5}, {0, 1, 0.5}});
  LayerTape tape;
  layer.apply(X, M, tape);
  // X~ = X^T M: column l of X~ is the M-weighted mix of neighbor rows.
  EXPECT_EQ(tape.V, Matrix::from_rows({{1, 2, 3, 4, 2, 3}}));
}

TEST(PaiConvApply, ShapeMismatchThrows) {
  Rng rng(13);
  PaiConvLayer layer("l", 2, 1, 3, 0, true, rng);
  auto M = std::make_shared<PermutationTensor>();
  M->n = 1;
  M->K = 2;
  M->L = 3;
  M->weights = Matrix(2, 3);
  LayerTape tape;
  EXPECT_THROW(layer.apply(Matrix(2, 3), M, tape), ContractError);
  EXPECT_THROW(layer.apply(Matrix(2, 2), nullptr, tape), ContractError);
  layer.apply(Matrix(2, 2), M, tape);
  EXPECT_THROW(layer.apply_backward(tape, Matrix(2, 1)), ContractError);
}

TEST(PaiConvLayer, ParameterCountsFullVsIsotropic) {
  Rng rng(14);
  const std::size_t D = 5, dr = 3, dout = 7, L = 6, din = D + dr;
  const PaiConvLayer full("a", D, dout, L, dr, true, rng), iso("b", D, dout, L, dr, false, rng);
  const std::size_t pos = 7 * dr + dr;
  EXPECT_EQ(full.parameter_count(), pos + din * L * dout + dout);
  EXPECT_EQ(iso.parameter_count(), pos + din * dout + dout);
  EXPECT_EQ(full.parameter_count() - iso.parameter_count(), dout * din * (L - 1));
}

TEST(PaiConvLayer, InitializationFanInBoundsAndZeroBias) {
  Rng rng(15);
  const PaiConvLayer layer("l", 4, 6, 5, 3, true, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(7 * 5));
  for (double v : layer.weight.value.data()) EXPECT_LE(std::abs(v), bound);
  for (double v : layer.bias.value.data()) EXPECT_EQ(v, 0.0);
  for (double v : layer.position.weight.value.data()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(7.0));
}

class NeighborOrder : public ::testing::TestWithParam<Variant> {};

TEST_P(NeighborOrder, InvariantUnlessOrderDriven) {
  Rng rng(16);
  int changed = 0;
  for (int t = 0; t < 10; ++t) {
    const PointCloud c = ball_cloud(40, rng, 3);
    const NeighborIndex nbr = knn_bruteforce(c, 8);
    const NeighborIndex shuffled = shuffle_slots(nbr, rng);
    const VariantConfig v = make_variant(GetParam(), 6, rng);
    PaiConvLayer layer("l", 3, 4, 6, 5, v.anisotropic, rng);
    LayerTape t1, t2;
    const Matrix a = layer.forward(c, nbr, permutation_for(c, nbr, v.kernel.points, v.normalizer), t1);
    const Matrix b =
        layer.forward(c, shuffled, permutation_for(c, shuffled, v.kernel.points, v.normalizer), t2);
    const double diff = oracle::max_abs_diff(a, b);
    if (GetParam() == Variant::kNoPermutation) {
      changed += diff > 1e-6;
    } else {
      EXPECT_LT(diff, 1e-9);
    }
  }
  if (GetParam() == Variant::kNoPermutation) {
    EXPECT_EQ(changed, 10);
  }
}

INSTANTIATE_TEST_SUITE_P(Variants, NeighborOrder,
                         ::testing::Values(Variant::kFull, Variant::kSoftmax, Variant::kIsotropic,
                                           Variant::kNoSparsemax, Variant::kRandomKernel,
                                           Variant::kNoPermutation),
                         [](const auto& info) { return std::string(variant_name(info.param)); });

class LayerGradient : public ::testing::TestWithParam<Variant> {};

// Full operator: coordinates -> local positions -> M, position code, filter.
// Scalar loss <Y, R>; checks every parameter, feature and coordinate.
TEST_P(LayerGradient, MatchesCentralDifferences) {
  Rng rng(17);
  const std::size_t n = 4, K = 3, L = 4;
  PointCloud c = ball_cloud(n, rng, 2);
  const NeighborIndex nbr = knn_bruteforce(c, K);
  const VariantConfig v = make_variant(GetParam(), L, rng);
  PaiConvLayer layer("l", 2, 2, L, 2, v.anisotropic, rng);
  fill_uniform(layer.bias.value, rng, 0.2);
  fill_uniform(layer.position.bias.value, rng, 0.2);
  Matrix R(n, 2);
  fill_uniform(R, rng);

  auto loss = [&] {
    LayerTape tape;
    const Matrix Y = layer.forward(c, nbr, permutation_for(c, nbr, v.kernel.points, v.normalizer), tape);
    double s = 0.0;
    for (std::size_t k = 0; k < Y.size(); ++k) s += Y.data()[k] * R.data()[k];
    return s;
  };

  LayerTape tape;
  const Matrix local = local_positions(c, nbr);
  auto M = std::make_shared<const PermutationTensor>(
      build_permutation(local, K, v.kernel.points, v.normalizer));
  layer.forward(c, nbr, M, tape);
  const LayerGrads g = layer.backward(tape, nbr, R, true);
  Matrix d_coords(n, 3);
  position_input_backward(g.d_position_in, tape.position, nbr, d_coords);
  local_positions_backward(permutation_backward(*M, local, v.kernel.points, g.d_weights).d_local,
                           nbr, d_coords);

  const double h = 1e-5;
  auto probe = [&](Matrix& value, const Matrix& grad, const std::string& what) {
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double keep = value.data()[k];
      value.data()[k] = keep + h;
      const double up = loss();
      value.data()[k] = keep - h;
      const double down = loss();
      value.data()[k] = keep;
      EXPECT_LT(oracle::rel_err(grad.data()[k], (up - down) / (2 * h), 1e-6), 1e-4) << what << k;
    }
  };
  probe(layer.weight.value, layer.weight.grad, "W");
  probe(layer.bias.value, layer.bias.grad, "b");
  probe(layer.position.weight.value, layer.position.weight.grad, "A");
  probe(layer.position.bias.value, layer.position.bias.grad, "a");
  probe(*c.features, g.d_features, "f");
  probe(c.coords, d_coords, "p");
}

TEST_P(LayerGradient, ZeroUpstreamGivesZeroGradients) {
  Rng rng(18);
  const PointCloud c = ball_cloud(6, rng, 2);
  const NeighborIndex nbr = knn_bruteforce(c, 3);
  const VariantConfig v = make_variant(GetParam(), 4, rng);
  PaiConvLayer layer("l", 2, 3, 4, 2, v.anisotropic, rng);
  LayerTape tape;
  layer.forward(c, nbr, permutation_for(c, nbr, v.kernel.points, v.normalizer), tape);
  const LayerGrads g = layer.backward(tape, nbr, Matrix(6, 3), true);
  for (const Matrix* m : std::initializer_list<const Matrix*>{&g.d_X, &g.d_weights, &g.d_features, &g.d_position_in, &layer.weight.grad,
                          &layer.bias.grad, &layer.position.weight.grad})
    for (double x : m->data()) EXPECT_EQ(x, 0.0);
}

INSTANTIATE_TEST_SUITE_P(Variants, LayerGradient, ::testing::ValuesIn(kAllVariants),
                         [](const auto& info) { return std::string(variant_name(info.param)); });

TEST(LearnableKernel, KernelGradientSkipsOrigin) {
  Rng rng(19);
  const PointCloud c = ball_cloud(20, rng);
  const NeighborIndex nbr = knn_bruteforce(c, 5);
  const Matrix kernel = fibonacci_lattice(6).points;
  const Matrix local = local_positions(c, nbr);
  const auto M = build_permutation(local, 5, kernel, Normalizer::kSparsemax);
  Matrix dW(M.weights.rows(), 6);
  fill_uniform(dW, rng);
  const PermutationGrad g = permutation_backward(M, local, kernel, dW);
  for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(g.d_kernel(0, a), 0.0);
  double mag = 0.0;
  for (double x : g.d_kernel.data()) mag += std::abs(x);
  EXPECT_GT(mag, 0.0);
}

TEST(Variants, NamesRoundTripAndUnknownRejected) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_THROW(parse_variant("bogus"), ContractError);
}

TEST(Variants, Configuration) {
  Rng rng(20);
  EXPECT_EQ(make_variant(Variant::kFull, 8, rng).kernel.points, fibonacci_lattice(8).points);
  EXPECT_EQ(make_variant(Variant::kNoPermutation, 8, rng).normalizer, Normalizer::kOrderOneHot);
  EXPECT_EQ(make_variant(Variant::kNoSparsemax, 8, rng).normalizer, Normalizer::kRaw);
  EXPECT_EQ(make_variant(Variant::kSoftmax, 8, rng).normalizer, Normalizer::kSoftmax);
  const VariantConfig iso = make_variant(Variant::kIsotropic, 8, rng);
  EXPECT_FALSE(iso.anisotropic);
  EXPECT_EQ(iso.normalizer, Normalizer::kUniform);
  EXPECT_NE(make_variant(Variant::kRandomKernel, 8, rng).kernel.points, fibonacci_lattice(8).points);
  const VariantConfig lk = make_variant(Variant::kLearnableKernel, 8, rng);
  EXPECT_TRUE(lk.learnable_kernel);
  EXPECT_EQ(lk.kernel.points, fibonacci_lattice(8).points);
}

// Serial reference kernels. Written directly from the per-point matrix
// formulation (X~_i = X_i M_i, vec column-major) with no fusion or sparsity
// shortcuts, for checking the parallel kernels.

#include <algorithm>
#include <numeric>
#include <vector>

#include "paiconv/kernels.hpp"

namespace paiconv::kernels::ref {
namespace {

Matrix block(const Matrix& m, std::size_t first_row, std::size_t rows) {
  Matrix b(rows, m.cols());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) b(r, c) = m(first_row + r, c);
  return b;
}

}  // namespace

NeighborIndex knn(const Matrix& coords, std::size_t k) {
  const std::size_t n = coords.rows();
  if (n == 0) throw ContractError("knn: empty point cloud");
  if (k == 0) throw ContractError("knn: k must be >= 1");
  NeighborIndex out{n, k, std::vector<std::uint32_t>(n * k)};
  std::vector<std::uint32_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (a == i) return b != i;
      if (b == i) return false;
      return squared_distance(coords, i, a) < squared_distance(coords, i, b);
    });
    for (std::size_t s = 0; s < k; ++s)
      out.idx[i * k + s] = s < n ? order[s] : static_cast<std::uint32_t>(i);
  }
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) { return paiconv::matmul(a, b); }

Matrix matmul_tn(const Matrix& a, const Matrix& b) { return paiconv::matmul_tn(a, b); }

void permutation_forward(const Matrix& local, std::size_t K, const Matrix& kernel,
                         Normalizer mode, Matrix& logits, Matrix& weights) {
  const std::size_t n = local.rows() / K;
  const std::size_t L = kernel.rows();
  logits = Matrix(n * K, L);
  weights = Matrix(n * K, L);
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix z = paiconv::matmul_nt(block(local, i * K, K), kernel);
    Matrix w(K, L);
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> column(K);
      for (std::size_t j = 0; j < K; ++j) column[j] = z(j, l);
      std::vector<double> normalized(K, 0.0);
      switch (mode) {
        case Normalizer::kSparsemax:
          normalized = sparsemax(column);
          break;
        case Normalizer::kSoftmax:
          normalized = softmax(column);
          break;
        case Normalizer::kRaw:
          normalized = column;
          break;
        case Normalizer::kOrderOneHot:
          normalized[std::min(l, K - 1)] = 1.0;
          break;
        case Normalizer::kUniform:
          std::fill(normalized.begin(), normalized.end(), 1.0 / static_cast<double>(K));
          break;
      }
      if (l == 0 && mode != Normalizer::kOrderOneHot && mode != Normalizer::kUniform) {
        std::fill(normalized.begin(), normalized.end(), 0.0);
        normalized[0] = 1.0;
      }
      for (std::size_t j = 0; j < K; ++j) w(j, l) = normalized[j];
    }
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t l = 0; l < L; ++l) {
        logits(i * K + j, l) = z(j, l);
        weights(i * K + j, l) = w(j, l);
      }
    }
  }
}

Matrix permutation_logit_grad(std::size_t K, Normalizer mode, const Matrix& weights,
                              const Matrix& d_weights) {
  const std::size_t n = weights.rows() / K;
  const std::size_t L = weights.cols();
  Matrix dz(n * K, L);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 1; l < L; ++l) {
      // Dense Jacobian of the column normalizer, applied to the upstream.
      Matrix jac(K, K);
      for (std::size_t a = 0; a < K; ++a) {
        for (std::size_t b = 0; b < K; ++b) {
          const double pa = weights(i * K + a, l);
          const double pb = weights(i * K + b, l);
          switch (mode) {
            case Normalizer::kSparsemax: {
              std::size_t support = 0;
              for (std::size_t j = 0; j < K; ++j) support += weights(i * K + j, l) > 0.0;
              const double sa = pa > 0.0, sb = pb > 0.0;
              jac(a, b) = (a == b ? sa : 0.0) - sa * sb / static_cast<double>(support);
              break;
            }
            case Normalizer::kSoftmax:
              jac(a, b) = (a == b ? pa : 0.0) - pa * pb;
              break;
            case Normalizer::kRaw:
              jac(a, b) = a == b ? 1.0 : 0.0;
              break;
            default:
              jac(a, b) = 0.0;
          }
        }
      }
      for (std::size_t a = 0; a < K; ++a) {
        double s = 0.0;
        for (std::size_t b = 0; b < K; ++b) s += jac(a, b) * d_weights(i * K + b, l);
        dz(i * K + a, l) = s;
      }
    }
  }
  return dz;
}

Matrix resample(const Matrix& X, const Matrix& M, std::size_t K) {
  const std::size_t n = X.rows() / K;
  const std::size_t d = X.cols();
  const std::size_t L = M.cols();
  Matrix V(n, L * d);
  for (std::size_t i = 0; i < n; ++i) {
    // X~_i = X_i M_i with X_i stored neighbor-major (K x d_in) here.
    const Matrix resampled = paiconv::matmul_tn(block(X, i * K, K), block(M, i * K, K));
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < d; ++c) V(i, l * d + c) = resampled(c, l);
  }
  return V;
}

void resample_backward(const Matrix& X, const Matrix& M, std::size_t K, const Matrix& dV,
                       Matrix& dX, Matrix* dM) {
  const std::size_t n = X.rows() / K;
  const std::size_t d = X.cols();
  const std::size_t L = M.cols();
  dX = Matrix(n * K, d);
  if (dM) *dM = Matrix(n * K, L);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix d_resampled(d, L);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < d; ++c) d_resampled(c, l) = dV(i, l * d + c);
    const Matrix dxi = paiconv::matmul_nt(block(M, i * K, K), d_resampled);
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t c = 0; c < d; ++c) dX(i * K + j, c) = dxi(j, c);
    if (!dM) continue;
    const Matrix dmi = paiconv::matmul(block(X, i * K, K), d_resampled);
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t l = 0; l < L; ++l) (*dM)(i * K + j, l) = dmi(j, l);
  }
}

}  // namespace paiconv::kernels::ref

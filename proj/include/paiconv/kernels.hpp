#pragma once

// Data-parallel inner loops. Each kernel has an OpenMP implementation in
// paiconv::kernels and a straightforward serial reference in
// paiconv::kernels::ref; tests hold the two to the same results.
//
// Tensor layout: an n x K x C tensor is a (n*K) x C Matrix, point-major.

#include <cstddef>

#include "paiconv/neighbors.hpp"
#include "paiconv/numkit.hpp"

namespace paiconv {

/// How each kernel column of the dot-product logits becomes resampling
/// weights.
enum class Normalizer {
  kSparsemax,
  kSoftmax,
  kRaw,         // logits used directly
  kOrderOneHot, // column l picks neighbor slot min(l, K-1); ignores geometry
  kUniform,     // every column is 1/K on each neighbor
};

namespace kernels {

/// Squared Euclidean distance between rows of an n x 3 matrix. Every KNN path
/// uses this one expression so distances compare bit-identically.
inline double squared_distance(const Matrix& c, std::size_t a, std::size_t b) noexcept {
  const double dx = c(a, 0) - c(b, 0);
  const double dy = c(a, 1) - c(b, 1);
  const double dz = c(a, 2) - c(b, 2);
  return dx * dx + dy * dy + dz * dz;
}

NeighborIndex knn(const Matrix& coords, std::size_t k);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// logits = per point P~_i K^T (n*K x L); weights = normalized columns with
/// column 0 replaced by the center indicator. kUniform keeps every column
/// uniform, column 0 included.
void permutation_forward(const Matrix& local, std::size_t K, const Matrix& kernel,
                         Normalizer mode, Matrix& logits, Matrix& weights);

/// Gradient of the logits given the gradient of the weights. Column 0 and the
/// geometry-free modes contribute zero.
Matrix permutation_logit_grad(std::size_t K, Normalizer mode, const Matrix& weights,
                              const Matrix& d_weights);

/// V (n x L*d_in): per point vec(X_i^T M_i), kernel-slot-major.
Matrix resample(const Matrix& X, const Matrix& M, std::size_t K);

/// Given dV, returns dX (n*K x d_in) and, when `dM` is non-null, dM (n*K x L).
void resample_backward(const Matrix& X, const Matrix& M, std::size_t K, const Matrix& dV,
                       Matrix& dX, Matrix* dM);

namespace ref {

NeighborIndex knn(const Matrix& coords, std::size_t k);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
void permutation_forward(const Matrix& local, std::size_t K, const Matrix& kernel,
                         Normalizer mode, Matrix& logits, Matrix& weights);
Matrix permutation_logit_grad(std::size_t K, Normalizer mode, const Matrix& weights,
                              const Matrix& d_weights);
Matrix resample(const Matrix& X, const Matrix& M, std::size_t K);
void resample_backward(const Matrix& X, const Matrix& M, std::size_t K, const Matrix& dV,
                       Matrix& dX, Matrix* dM);

}  // namespace ref
}  // namespace kernels
}  // namespace paiconv

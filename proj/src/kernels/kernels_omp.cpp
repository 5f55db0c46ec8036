#include <omp.h>

#include <algorithm>
#include <cstdint>
#include <vector>

#include "paiconv/kernels.hpp"
#include "paiconv/parallel.hpp"

namespace paiconv {

void set_threads(int n) {
  if (n < 1) throw ContractError("thread count must be >= 1");
  omp_set_num_threads(n);
}

int thread_count() { return omp_get_max_threads(); }

namespace kernels {
namespace {

using Index = std::int64_t;

struct Candidate {
  double d2;
  std::uint32_t idx;
  bool operator<(const Candidate& o) const noexcept {
    return d2 < o.d2 || (d2 == o.d2 && idx < o.idx);
  }
};

}  // namespace

NeighborIndex knn(const Matrix& coords, std::size_t k) {
  const std::size_t n = coords.rows();
  if (n == 0) throw ContractError("knn: empty point cloud");
  if (k == 0) throw ContractError("knn: k must be >= 1");
  NeighborIndex out{n, k, std::vector<std::uint32_t>(n * k)};
  const std::size_t take = std::min(k - 1, n - 1);

#pragma omp parallel
  {
    // Best `take` candidates so far, ascending; a bounded insertion list.
    std::vector<Candidate> best(take + 1);
#pragma omp for schedule(static)
    for (Index ii = 0; ii < static_cast<Index>(n); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      std::size_t size = 0;
      for (std::size_t j = 0; take > 0 && j < n; ++j) {
        if (j == i) continue;
        const Candidate c{squared_distance(coords, i, j), static_cast<std::uint32_t>(j)};
        if (size == take && !(c < best[take - 1])) continue;
        std::size_t pos = size < take ? size++ : take - 1;
        while (pos > 0 && c < best[pos - 1]) {
          best[pos] = best[pos - 1];
          --pos;
        }
        best[pos] = c;
      }
      auto row = out.row(i);
      row[0] = static_cast<std::uint32_t>(i);
      for (std::size_t s = 0; s < take; ++s) row[s + 1] = best[s].idx;
      for (std::size_t s = take + 1; s < k; ++s) row[s] = static_cast<std::uint32_t>(i);
    }
  }
  return out;
}

namespace {

/// out[j] += sum_k a[k * a_stride] * b[k * b_stride + j], k ascending. Terms
/// are added one at a time in that order, so the vector width of the chosen
/// clone does not change the result.
[[gnu::target_clones("avx2", "default")]] void accumulate_row(double* __restrict out,
                                                              std::size_t m, const double* a,
                                                              std::size_t a_stride,
                                                              const double* __restrict b,
                                                              std::size_t b_stride,
                                                              std::size_t count) {
  std::size_t k = 0;
  for (; k + 4 <= count; k += 4) {
    const double a0 = a[k * a_stride], a1 = a[(k + 1) * a_stride];
    const double a2 = a[(k + 2) * a_stride], a3 = a[(k + 3) * a_stride];
    const double* b0 = b + k * b_stride;
    const double* b1 = b0 + b_stride;
    const double* b2 = b1 + b_stride;
    const double* b3 = b2 + b_stride;
    for (std::size_t j = 0; j < m; ++j) {
      double o = out[j];
      o += a0 * b0[j];
      o += a1 * b1[j];
      o += a2 * b2[j];
      o += a3 * b3[j];
      out[j] = o;
    }
  }
  for (; k < count; ++k) {
    const double ak = a[k * a_stride];
    const double* bk = b + k * b_stride;
    for (std::size_t j = 0; j < m; ++j) out[j] += ak * bk[j];
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ContractError("kernels::matmul: shape mismatch");
  Matrix c(a.rows(), b.cols());
  const double* bp = b.data().data();
#pragma omp parallel for schedule(static)
  for (Index ii = 0; ii < static_cast<Index>(a.rows()); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    accumulate_row(c.row(i).data(), c.cols(), a.row(i).data(), 1, bp, b.cols(), a.cols());
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ContractError("kernels::matmul_tn: shape mismatch");
  Matrix c(a.cols(), b.cols());
  const double* ap = a.data().data();
  const double* bp = b.data().data();
#pragma omp parallel for schedule(static)
  for (Index ii = 0; ii < static_cast<Index>(a.cols()); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    accumulate_row(c.row(i).data(), c.cols(), ap + i, a.cols(), bp, b.cols(), a.rows());
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ContractError("kernels::matmul_nt: shape mismatch");
  return kernels::matmul(a, paiconv::transpose(b));
}

void permutation_forward(const Matrix& local, std::size_t K, const Matrix& kernel,
                         Normalizer mode, Matrix& logits, Matrix& weights) {
  if (K == 0 || local.rows() % K != 0 || local.cols() != 3 || kernel.cols() != 3)
    throw ContractError("permutation_forward: inconsistent shapes");
  const std::size_t n = local.rows() / K;
  const std::size_t L = kernel.rows();
  logits = Matrix(n * K, L);
  weights = Matrix(n * K, L);

#pragma omp parallel
  {
    std::vector<double> col(K), out(K), scratch;
#pragma omp for schedule(static)
    for (Index ii = 0; ii < static_cast<Index>(n); ++ii) {
      const std::size_t base = static_cast<std::size_t>(ii) * K;
      for (std::size_t j = 0; j < K; ++j) {
        const auto p = local.row(base + j);
        auto z = logits.row(base + j);
        for (std::size_t l = 0; l < L; ++l)
          z[l] = p[0] * kernel(l, 0) + p[1] * kernel(l, 1) + p[2] * kernel(l, 2);
      }
      switch (mode) {
        case Normalizer::kOrderOneHot:
          for (std::size_t l = 0; l < L; ++l) weights(base + std::min(l, K - 1), l) = 1.0;
          continue;
        case Normalizer::kUniform:
          for (std::size_t j = 0; j < K; ++j)
            for (std::size_t l = 0; l < L; ++l) weights(base + j, l) = 1.0 / static_cast<double>(K);
          continue;
        default:
          break;
      }
      weights(base, 0) = 1.0;
      for (std::size_t l = 1; l < L; ++l) {
        for (std::size_t j = 0; j < K; ++j) col[j] = logits(base + j, l);
        if (mode == Normalizer::kSparsemax) {
          sparsemax(col, out, scratch);
        } else if (mode == Normalizer::kSoftmax) {
          softmax(col, out);
        } else {
          out = col;
        }
        for (std::size_t j = 0; j < K; ++j) weights(base + j, l) = out[j];
      }
    }
  }
}

Matrix permutation_logit_grad(std::size_t K, Normalizer mode, const Matrix& weights,
                              const Matrix& d_weights) {
  if (weights.rows() != d_weights.rows() || weights.cols() != d_weights.cols() || K == 0 ||
      weights.rows() % K != 0)
    throw ContractError("permutation_logit_grad: inconsistent shapes");
  const std::size_t n = weights.rows() / K;
  const std::size_t L = weights.cols();
  Matrix dz(n * K, L);
  if (mode == Normalizer::kOrderOneHot || mode == Normalizer::kUniform) return dz;

#pragma omp parallel
  {
    std::vector<double> p(K), u(K), out(K);
#pragma omp for schedule(static)
    for (Index ii = 0; ii < static_cast<Index>(n); ++ii) {
      const std::size_t base = static_cast<std::size_t>(ii) * K;
      for (std::size_t l = 1; l < L; ++l) {
        for (std::size_t j = 0; j < K; ++j) {
          p[j] = weights(base + j, l);
          u[j] = d_weights(base + j, l);
        }
        if (mode == Normalizer::kSparsemax) {
          sparsemax_jacobian_vp(p, u, out);
        } else if (mode == Normalizer::kSoftmax) {
          softmax_jacobian_vp(p, u, out);
        } else {
          out = u;
        }
        for (std::size_t j = 0; j < K; ++j) dz(base + j, l) = out[j];
      }
    }
  }
  return dz;
}

Matrix resample(const Matrix& X, const Matrix& M, std::size_t K) {
  if (K == 0 || X.rows() != M.rows() || X.rows() % K != 0)
    throw ContractError("resample: inconsistent shapes");
  const std::size_t n = X.rows() / K;
  const std::size_t d = X.cols();
  const std::size_t L = M.cols();
  Matrix V(n, L * d);
#pragma omp parallel for schedule(static)
  for (Index ii = 0; ii < static_cast<Index>(n); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    auto v = V.row(i);
    for (std::size_t j = 0; j < K; ++j) {
      const auto m = M.row(i * K + j);
      const auto x = X.row(i * K + j);
      for (std::size_t l = 0; l < L; ++l) {
        const double w = m[l];
        if (w == 0.0) continue;
        double* slot = v.data() + l * d;
        for (std::size_t c = 0; c < d; ++c) slot[c] += w * x[c];
      }
    }
  }
  return V;
}

void resample_backward(const Matrix& X, const Matrix& M, std::size_t K, const Matrix& dV,
                       Matrix& dX, Matrix* dM) {
  if (K == 0 || X.rows() != M.rows() || X.rows() % K != 0 || dV.rows() != X.rows() / K ||
      dV.cols() != M.cols() * X.cols())
    throw ContractError("resample_backward: inconsistent shapes");
  const std::size_t n = X.rows() / K;
  const std::size_t d = X.cols();
  const std::size_t L = M.cols();
  dX = Matrix(n * K, d);
  if (dM) *dM = Matrix(n * K, L);
#pragma omp parallel for schedule(static)
  for (Index ii = 0; ii < static_cast<Index>(n); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const auto dv = dV.row(i);
    for (std::size_t j = 0; j < K; ++j) {
      const auto m = M.row(i * K + j);
      auto dx = dX.row(i * K + j);
      for (std::size_t l = 0; l < L; ++l) {
        const double w = m[l];
        if (w == 0.0) continue;
        const double* slot = dv.data() + l * d;
        for (std::size_t c = 0; c < d; ++c) dx[c] += w * slot[c];
      }
      if (!dM) continue;
      const auto x = X.row(i * K + j);
      auto dm = dM->row(i * K + j);
      for (std::size_t l = 0; l < L; ++l) {
        const double* slot = dv.data() + l * d;
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += x[c] * slot[c];
        dm[l] = s;
      }
    }
  }
}

}  // namespace kernels
}  // namespace paiconv

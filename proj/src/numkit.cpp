#include "paiconv/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "paiconv/rng.hpp"

namespace paiconv {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ContractError("Matrix::from_rows: ragged rows");
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& m, const std::string& what) {
  const auto d = m.data();
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (!std::isfinite(d[k])) {
      throw NumericError("non-finite value in " + what + " at row " +
                         std::to_string(k / std::max<std::size_t>(m.cols(), 1)) + ", col " +
                         std::to_string(k % std::max<std::size_t>(m.cols(), 1)));
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ContractError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                        " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ContractError("matmul_tn: row counts differ");
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto arow = a.row(k);
    const auto brow = b.row(k);
    for (std::size_t i = 0; i < arow.size(); ++i) {
      const double aki = arow[i];
      auto out = c.row(i);
      for (std::size_t j = 0; j < brow.size(); ++j) out[j] += aki * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ContractError("matmul_nt: column counts differ");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < arow.size(); ++k) s += arow[k] * brow[k];
      c(i, j) = s;
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// exp(x) - 1 rather than expm1: several times faster in glibc, and the
// absolute error near 0 stays at one ulp of 1.
double elu(double x) noexcept { return x > 0.0 ? x : kEluAlpha * (std::exp(x) - 1.0); }

double elu_grad(double x) noexcept { return x > 0.0 ? 1.0 : kEluAlpha * std::exp(x); }

Matrix elu(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  auto in = x.data();
  auto out = y.data();
  for (std::size_t k = 0; k < in.size(); ++k) out[k] = elu(in[k]);
  return y;
}

Matrix elu_grad(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  auto in = x.data();
  auto out = y.data();
  for (std::size_t k = 0; k < in.size(); ++k) out[k] = elu_grad(in[k]);
  return y;
}

namespace {

// Kept free of throws: exceptions do not unwind reliably through the ifunc
// dispatch of cloned functions in every build mode.
[[gnu::target_clones("avx2", "default")]] void sparsemax_kernel(std::span<const double> z,
                                                                std::span<double> out,
                                                                std::vector<double>& scratch) {
  const std::size_t n = z.size();

  // k* = max{k : 1 + k z_(k) > sum_{j<=k} z_(j)} over z sorted descending.
  // The test is constant across a run of tied values, so it can be evaluated
  // per element i with k = #{j : z_j >= z_i} and the matching sum.
  double support_sum = 0.0;
  std::size_t support = 0;
  if (n <= 64) {
    // Branch-free O(n^2) scan, vectorized across i; cheaper than sorting
    // for short columns. Each sum runs over j in ascending order.
    double count[64], sum[64];
    for (std::size_t i = 0; i < n; ++i) count[i] = sum[i] = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double zj = z[j];
      for (std::size_t i = 0; i < n; ++i) {
        const double ge = zj >= z[i];
        count[i] += ge;
        sum[i] += ge * zj;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(count[i]);
      if (c > support && 1.0 + count[i] * z[i] > sum[i]) {
        support = c;
        support_sum = sum[i];
      }
    }
  } else {
    scratch.assign(z.begin(), z.end());
    std::sort(scratch.begin(), scratch.end(), std::greater<>());
    double cumsum = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
      cumsum += scratch[k - 1];
      if (1.0 + static_cast<double>(k) * scratch[k - 1] > cumsum) {
        support = k;
        support_sum = cumsum;
      }
    }
  }
  if (support == 0) {
    // 1 + k z > k z failed in floating point; only huge inputs get here.
    const double top = *std::max_element(z.begin(), z.end());
    support = static_cast<std::size_t>(std::count(z.begin(), z.end(), top));
    support_sum = static_cast<double>(support) * top;
  }
  const double tau = (support_sum - 1.0) / static_cast<double>(support);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::max(z[i] - tau, 0.0);
}

}  // namespace

void sparsemax(std::span<const double> z, std::span<double> out, std::vector<double>& scratch) {
  if (z.empty()) throw ContractError("sparsemax: empty input");
  if (out.size() != z.size()) throw ContractError("sparsemax: output size mismatch");
  if (z.size() > 64) scratch.reserve(z.size());
  sparsemax_kernel(z, out, scratch);
}

std::vector<double> sparsemax(std::span<const double> z) {
  std::vector<double> out(z.size());
  std::vector<double> scratch;
  sparsemax(z, out, scratch);
  return out;
}

void sparsemax_jacobian_vp(std::span<const double> p, std::span<const double> upstream,
                           std::span<double> out) {
  const std::size_t n = p.size();
  if (upstream.size() != n || out.size() != n)
    throw ContractError("sparsemax_jacobian_vp: size mismatch");
  double sum = 0.0;
  std::size_t support = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] > 0.0) {
      sum += upstream[i];
      ++support;
    }
  }
  if (support == 0) throw ContractError("sparsemax_jacobian_vp: empty support");
  const double mean = sum / static_cast<double>(support);
  for (std::size_t i = 0; i < n; ++i) out[i] = p[i] > 0.0 ? upstream[i] - mean : 0.0;
}

std::vector<double> sparsemax_jacobian_vp(std::span<const double> p,
                                          std::span<const double> upstream) {
  std::vector<double> out(p.size());
  sparsemax_jacobian_vp(p, upstream, out);
  return out;
}

void softmax(std::span<const double> z, std::span<double> out) {
  if (z.empty()) throw ContractError("softmax: empty input");
  if (out.size() != z.size()) throw ContractError("softmax: output size mismatch");
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> out(z.size());
  softmax(z, out);
  return out;
}

void softmax_jacobian_vp(std::span<const double> p, std::span<const double> upstream,
                         std::span<double> out) {
  if (upstream.size() != p.size() || out.size() != p.size())
    throw ContractError("softmax_jacobian_vp: size mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * upstream[i];
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (upstream[i] - dot);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ContractError("Rng::below: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace paiconv

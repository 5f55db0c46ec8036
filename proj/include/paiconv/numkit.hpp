#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace paiconv {

/// Raised when a caller breaks a documented precondition (shape mismatch,
/// out-of-range argument, empty input where one is required).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
///
/// Every tensor in the library is a 2-D slice of this type; an n x K x C
/// tensor is stored as a (n*K) x C matrix with the point index outermost.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  void fill(double v);
  bool all_finite() const noexcept;
  std::size_t bytes() const noexcept { return data_.size() * sizeof(double); }

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Throws NumericError naming `what` if `m` holds a NaN or Inf.
void require_finite(const Matrix& m, const std::string& what);

/// a * b. Each output entry is accumulated sequentially over the inner
/// dimension so results are bit-reproducible.
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b, accumulated sequentially over the shared row dimension.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// ELU with alpha = 1.
inline constexpr double kEluAlpha = 1.0;
double elu(double x) noexcept;
double elu_grad(double x) noexcept;
Matrix elu(const Matrix& x);
Matrix elu_grad(const Matrix& x);

/// Euclidean projection of z onto the probability simplex.
std::vector<double> sparsemax(std::span<const double> z);
/// Allocation-free form; `scratch` is resized as needed and may be reused.
void sparsemax(std::span<const double> z, std::span<double> out, std::vector<double>& scratch);

/// Jacobian-vector product of sparsemax at z, given p = sparsemax(z):
/// J u = s * (u - mean_S(u)) with s the support indicator of p.
std::vector<double> sparsemax_jacobian_vp(std::span<const double> p,
                                          std::span<const double> upstream);
void sparsemax_jacobian_vp(std::span<const double> p, std::span<const double> upstream,
                           std::span<double> out);

std::vector<double> softmax(std::span<const double> z);
void softmax(std::span<const double> z, std::span<double> out);
/// J u = p * (u - <p, u>).
void softmax_jacobian_vp(std::span<const double> p, std::span<const double> upstream,
                         std::span<double> out);

}  // namespace paiconv

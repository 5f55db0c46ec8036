#pragma once

#include <string>
#include <utility>

#include "paiconv/numkit.hpp"
#include "paiconv/rng.hpp"

namespace paiconv {

/// A trainable tensor with its gradient accumulator and momentum slot.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix velocity;

  Param() = default;
  Param(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()),
        velocity(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const noexcept { return value.size(); }
};

/// rows x cols matrix with entries uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Matrix fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng);

/// Adds src into dst elementwise.
void accumulate(Matrix& dst, const Matrix& src);

}  // namespace paiconv

#pragma once

// Permutable anisotropic convolution.
//
// For point i with neighbors N_i (slot 0 = the point itself):
//   local positions   p~_ij = p_i - p_ij                       (K x 3)
//   permutation       M_i = normalize_columns(P~_i K^T)         (K x L)
//                     column 0 forced to the center indicator
//   position code     r_ij = ELU([p_i, p~_ij, |p~_ij|] A + a)  (d_r)
//   features          x_ij = r_ij (+) f_ij                      (d_in)
//   resample          X~_i = X_i M_i                            (d_in x L)
//   output            y_i = ELU(vec(X~_i)^T W + b)              (d_out)
// vec() stacks the columns of X~_i, so W's rows are grouped by kernel slot.

#include <array>
#include <cstddef>
#include <memory>
#include <string>
#include <string_view>

#include "paiconv/kernels.hpp"
#include "paiconv/lattice.hpp"
#include "paiconv/neighbors.hpp"
#include "paiconv/param.hpp"

namespace paiconv {

enum class Variant {
  kFull,
  kNoPermutation,
  kNoSparsemax,
  kSoftmax,
  kIsotropic,
  kRandomKernel,
  kLearnableKernel,
};

inline constexpr std::array<Variant, 7> kAllVariants = {
    Variant::kFull,      Variant::kNoPermutation, Variant::kNoSparsemax,     Variant::kSoftmax,
    Variant::kIsotropic, Variant::kRandomKernel,  Variant::kLearnableKernel,
};

std::string_view variant_name(Variant v);
/// Accepts the names printed by variant_name (e.g. "no_permutation").
Variant parse_variant(std::string_view name);

/// Everything a variant changes about the operator.
struct VariantConfig {
  Variant variant = Variant::kFull;
  Normalizer normalizer = Normalizer::kSparsemax;
  bool anisotropic = true;
  bool learnable_kernel = false;
  KernelLattice kernel;
};

/// no_permutation: one-hot by raw neighbor order. isotropic: uniform columns
/// and one shared filter on the neighbor mean. random_kernel draws the lattice
/// from `rng`; every other variant uses the Fibonacci lattice.
VariantConfig make_variant(Variant variant, std::size_t kernel_count, Rng& rng);

/// Per-point K x L resampling matrices, stacked as (n*K) x L.
struct PermutationTensor {
  std::size_t n = 0;
  std::size_t K = 0;
  std::size_t L = 0;
  Normalizer mode = Normalizer::kSparsemax;
  Matrix logits;
  Matrix weights;

  std::size_t bytes() const noexcept { return logits.bytes() + weights.bytes(); }
};

/// (n*K) x 3; row (i, 0) is exactly zero.
Matrix local_positions(const PointCloud& cloud, const NeighborIndex& nbr);

/// Scatters a gradient w.r.t. local positions onto point coordinates.
void local_positions_backward(const Matrix& d_local, const NeighborIndex& nbr, Matrix& d_coords);

PermutationTensor build_permutation(const Matrix& local, std::size_t K, const Matrix& kernel,
                                    Normalizer mode);

struct PermutationGrad {
  Matrix d_local;   // (n*K) x 3
  Matrix d_kernel;  // L x 3, row 0 always zero
};

PermutationGrad permutation_backward(const PermutationTensor& perm, const Matrix& local,
                                     const Matrix& kernel, const Matrix& d_weights);

/// Single linear layer + ELU over the 7-wide relative position input.
struct PositionMlp {
  Param weight;  // 7 x d_r
  Param bias;    // 1 x d_r

  std::size_t width() const noexcept { return weight.value.cols(); }
};

inline constexpr std::size_t kPositionInputWidth = 7;

struct PositionTape {
  Matrix input;  // (n*K) x 7
  Matrix pre;    // (n*K) x d_r
};

Matrix encode_position(const PointCloud& cloud, const NeighborIndex& nbr, const PositionMlp& mlp,
                       PositionTape* tape = nullptr);

/// Accumulates parameter gradients into `mlp` and returns d(input).
Matrix encode_position_backward(PositionMlp& mlp, const PositionTape& tape, const Matrix& d_code);

/// Scatters d(input) of the position MLP onto point coordinates.
void position_input_backward(const Matrix& d_input, const PositionTape& tape,
                             const NeighborIndex& nbr, Matrix& d_coords);

/// x_ij = r_ij (+) f_{nbr(i,j)}. `features` may be null (coordinates-only
/// input) and `code` may have zero columns.
Matrix assemble_features(const Matrix& code, const Matrix* features, const NeighborIndex& nbr);

struct LayerTape {
  std::shared_ptr<const PermutationTensor> permutation;
  PositionTape position;
  Matrix X;    // (n*K) x d_in
  Matrix V;    // n x (L*d_in), vec(X~_i) per row
  Matrix U;    // n x d_in, slot mean (isotropic only)
  Matrix pre;  // n x d_out

  std::size_t bytes() const noexcept;
};

struct LayerGrads {
  Matrix d_X;             // (n*K) x d_in
  Matrix d_weights;       // (n*K) x L, gradient w.r.t. M
  Matrix d_features;      // n x D, only from backward()
  Matrix d_position_in;   // (n*K) x 7, only from backward()
};

class PaiConvLayer {
 public:
  PaiConvLayer() = default;
  /// `feature_width` is D (0 for coordinates-only input); d_in = d_r + D.
  PaiConvLayer(std::string name, std::size_t feature_width, std::size_t out_width,
               std::size_t kernel_count, std::size_t position_width, bool anisotropic, Rng& init);

  std::size_t feature_width() const noexcept { return feature_width_; }
  std::size_t in_width() const noexcept { return feature_width_ + position.width(); }
  std::size_t out_width() const noexcept { return weight.value.cols(); }
  std::size_t kernel_count() const noexcept { return kernel_count_; }
  bool anisotropic() const noexcept { return anisotropic_; }
  std::size_t parameter_count() const noexcept;

  /// Resample and filter: Y = ELU(vec(X M) W + b).
  Matrix apply(Matrix X, std::shared_ptr<const PermutationTensor> M, LayerTape& tape) const;
  /// Accumulates into weight/bias gradients; returns d_X and, when
  /// `permutation_grad` is set, d_weights.
  LayerGrads apply_backward(const LayerTape& tape, const Matrix& dY, bool permutation_grad = true);

  /// Full operator: position code, feature assembly, resample, filter.
  Matrix forward(const PointCloud& cloud, const NeighborIndex& nbr,
                 std::shared_ptr<const PermutationTensor> M, LayerTape& tape) const;
  /// Also accumulates position MLP gradients and fills d_features and
  /// d_position_in.
  LayerGrads backward(const LayerTape& tape, const NeighborIndex& nbr, const Matrix& dY,
                      bool permutation_grad = true);

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn(position.weight);
    fn(position.bias);
    fn(weight);
    fn(bias);
  }

  Param weight;  // (L*d_in) x d_out, or d_in x d_out when isotropic
  Param bias;    // 1 x d_out
  PositionMlp position;

 private:
  std::size_t feature_width_ = 0;
  std::size_t kernel_count_ = 0;
  bool anisotropic_ = true;
};

}  // namespace paiconv

#include "paiconv/paiconv.hpp"

#include <cmath>

#include "paiconv/fault.hpp"

namespace paiconv {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoPermutation: return "no_permutation";
    case Variant::kNoSparsemax: return "no_sparsemax";
    case Variant::kSoftmax: return "softmax";
    case Variant::kIsotropic: return "isotropic";
    case Variant::kRandomKernel: return "random_kernel";
    case Variant::kLearnableKernel: return "learnable_kernel";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw ContractError("unknown variant '" + std::string(name) +
                      "' (expected full, no_permutation, no_sparsemax, softmax, isotropic, "
                      "random_kernel or learnable_kernel)");
}

VariantConfig make_variant(Variant variant, std::size_t kernel_count, Rng& rng) {
  VariantConfig cfg;
  cfg.variant = variant;
  switch (variant) {
    case Variant::kFull:
      break;
    case Variant::kNoPermutation:
      cfg.normalizer = Normalizer::kOrderOneHot;
      break;
    case Variant::kNoSparsemax:
      cfg.normalizer = Normalizer::kRaw;
      break;
    case Variant::kSoftmax:
      cfg.normalizer = Normalizer::kSoftmax;
      break;
    case Variant::kIsotropic:
      cfg.normalizer = Normalizer::kUniform;
      cfg.anisotropic = false;
      break;
    case Variant::kRandomKernel:
      cfg.kernel = random_lattice(kernel_count, rng);
      return cfg;
    case Variant::kLearnableKernel:
      cfg.learnable_kernel = true;
      break;
  }
  cfg.kernel = fibonacci_lattice(kernel_count);
  return cfg;
}

Matrix local_positions(const PointCloud& cloud, const NeighborIndex& nbr) {
  const Matrix& p = cloud.coords;
  if (nbr.n != p.rows()) throw ContractError("local_positions: index/cloud size mismatch");
  Matrix local(nbr.n * nbr.k, 3);
  for (std::size_t i = 0; i < nbr.n; ++i) {
    for (std::size_t j = 0; j < nbr.k; ++j) {
      const std::size_t q = nbr(i, j);
      for (std::size_t a = 0; a < 3; ++a) local(i * nbr.k + j, a) = p(i, a) - p(q, a);
    }
  }
  return local;
}

void local_positions_backward(const Matrix& d_local, const NeighborIndex& nbr, Matrix& d_coords) {
  for (std::size_t i = 0; i < nbr.n; ++i) {
    for (std::size_t j = 0; j < nbr.k; ++j) {
      const std::size_t q = nbr(i, j);
      for (std::size_t a = 0; a < 3; ++a) {
        d_coords(i, a) += d_local(i * nbr.k + j, a);
        d_coords(q, a) -= d_local(i * nbr.k + j, a);
      }
    }
  }
}

PermutationTensor build_permutation(const Matrix& local, std::size_t K, const Matrix& kernel,
                                    Normalizer mode) {
  PermutationTensor t;
  t.K = K;
  t.n = K == 0 ? 0 : local.rows() / K;
  t.L = kernel.rows();
  t.mode = mode;
  kernels::permutation_forward(local, K, kernel, mode, t.logits, t.weights);
  require_finite(t.weights, "soft-permutation weights");
  return t;
}

PermutationGrad permutation_backward(const PermutationTensor& perm, const Matrix& local,
                                     const Matrix& kernel, const Matrix& d_weights) {
  const Matrix dz = kernels::permutation_logit_grad(perm.K, perm.mode, perm.weights, d_weights);
  PermutationGrad g;
  g.d_local = kernels::matmul(dz, kernel);
  g.d_kernel = kernels::matmul_tn(dz, local);
  return g;
}

Matrix encode_position(const PointCloud& cloud, const NeighborIndex& nbr, const PositionMlp& mlp,
                       PositionTape* tape) {
  if (mlp.weight.value.rows() != kPositionInputWidth)
    throw ContractError("encode_position: position MLP input width must be 7");
  const Matrix& p = cloud.coords;
  Matrix input(nbr.n * nbr.k, kPositionInputWidth);
  for (std::size_t i = 0; i < nbr.n; ++i) {
    for (std::size_t j = 0; j < nbr.k; ++j) {
      auto row = input.row(i * nbr.k + j);
      const std::size_t q = nbr(i, j);
      double sq = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        const double diff = p(i, a) - p(q, a);
        row[a] = p(i, a);
        row[3 + a] = diff;
        sq += diff * diff;
      }
      row[6] = std::sqrt(sq);
    }
  }
  Matrix pre = kernels::matmul(input, mlp.weight.value);
  for (std::size_t r = 0; r < pre.rows(); ++r)
    for (std::size_t c = 0; c < pre.cols(); ++c) pre(r, c) += mlp.bias.value(0, c);
  Matrix code = elu(pre);
  if (tape) {
    tape->input = std::move(input);
    tape->pre = std::move(pre);
  }
  return code;
}

Matrix encode_position_backward(PositionMlp& mlp, const PositionTape& tape, const Matrix& d_code) {
  Matrix d_pre = elu_grad(tape.pre);
  auto dp = d_pre.data();
  auto dc = d_code.data();
  for (std::size_t k = 0; k < dp.size(); ++k) dp[k] *= dc[k];
  accumulate(mlp.weight.grad, kernels::matmul_tn(tape.input, d_pre));
  for (std::size_t r = 0; r < d_pre.rows(); ++r)
    for (std::size_t c = 0; c < d_pre.cols(); ++c) mlp.bias.grad(0, c) += d_pre(r, c);
  return kernels::matmul_nt(d_pre, mlp.weight.value);
}

void position_input_backward(const Matrix& d_input, const PositionTape& tape,
                             const NeighborIndex& nbr, Matrix& d_coords) {
  for (std::size_t i = 0; i < nbr.n; ++i) {
    for (std::size_t j = 0; j < nbr.k; ++j) {
      const auto din = d_input.row(i * nbr.k + j);
      const auto in = tape.input.row(i * nbr.k + j);
      const std::size_t q = nbr(i, j);
      const double dist = in[6];
      for (std::size_t a = 0; a < 3; ++a) {
        double d_offset = din[3 + a];
        // |p~| is not differentiable at 0; that only happens on self slots,
        // where p~ is identically zero.
        if (dist > 0.0) d_offset += din[6] * in[3 + a] / dist;
        d_coords(i, a) += din[a] + d_offset;
        d_coords(q, a) -= d_offset;
      }
    }
  }
}

Matrix assemble_features(const Matrix& code, const Matrix* features, const NeighborIndex& nbr) {
  const std::size_t rows = nbr.n * nbr.k;
  if (code.rows() != rows) throw ContractError("assemble_features: code rows != n*K");
  const std::size_t dr = code.cols();
  const std::size_t df = features ? features->cols() : 0;
  if (features && features->rows() != nbr.n)
    throw ContractError("assemble_features: feature rows != n");
  Matrix X(rows, dr + df);
  for (std::size_t i = 0; i < nbr.n; ++i) {
    for (std::size_t j = 0; j < nbr.k; ++j) {
      auto x = X.row(i * nbr.k + j);
      const auto r = code.row(i * nbr.k + j);
      std::copy(r.begin(), r.end(), x.begin());
      if (df) {
        const auto f = features->row(nbr(i, j));
        std::copy(f.begin(), f.end(), x.begin() + static_cast<std::ptrdiff_t>(dr));
      }
    }
  }
  return X;
}

std::size_t LayerTape::bytes() const noexcept {
  return position.input.bytes() + position.pre.bytes() + X.bytes() + V.bytes() + U.bytes() +
         pre.bytes();
}

PaiConvLayer::PaiConvLayer(std::string name, std::size_t feature_width, std::size_t out_width,
                           std::size_t kernel_count, std::size_t position_width, bool anisotropic,
                           Rng& init)
    : feature_width_(feature_width), kernel_count_(kernel_count), anisotropic_(anisotropic) {
  if (out_width == 0 || kernel_count < 2 || position_width + feature_width == 0)
    throw ContractError("PaiConvLayer: invalid widths");
  position.weight = Param(name + ".pos.weight",
                          fan_in_uniform(kPositionInputWidth, position_width, kPositionInputWidth, init));
  position.bias = Param(name + ".pos.bias", Matrix(1, position_width));
  const std::size_t d_in = position_width + feature_width;
  const std::size_t rows = anisotropic ? d_in * kernel_count : d_in;
  weight = Param(name + ".weight", fan_in_uniform(rows, out_width, rows, init));
  bias = Param(name + ".bias", Matrix(1, out_width));
}

std::size_t PaiConvLayer::parameter_count() const noexcept {
  return position.weight.size() + position.bias.size() + weight.size() + bias.size();
}

Matrix PaiConvLayer::apply(Matrix X, std::shared_ptr<const PermutationTensor> M,
                           LayerTape& tape) const {
  if (!M) throw ContractError("PaiConvLayer::apply: missing permutation tensor");
  const std::size_t K = M->K;
  if (X.cols() != in_width() || X.rows() != M->weights.rows() || M->L != kernel_count_)
    throw ContractError("PaiConvLayer::apply: inconsistent shapes");
  const std::size_t n = M->n;
  const std::size_t d = in_width();

  tape.permutation = M;
  tape.V = kernels::resample(X, M->weights, K);
  if (anisotropic_) {
    tape.pre = kernels::matmul(tape.V, weight.value);
  } else {
    tape.U = Matrix(n, d);
    const double inv = 1.0 / static_cast<double>(kernel_count_);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < kernel_count_; ++l)
        for (std::size_t c = 0; c < d; ++c) tape.U(i, c) += tape.V(i, l * d + c) * inv;
    tape.pre = kernels::matmul(tape.U, weight.value);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < tape.pre.cols(); ++c) tape.pre(i, c) += bias.value(0, c);
  require_finite(tape.pre, weight.name + " pre-activation");
  tape.X = std::move(X);
  return elu(tape.pre);
}

LayerGrads PaiConvLayer::apply_backward(const LayerTape& tape, const Matrix& dY,
                                        bool permutation_grad) {
  if (!tape.permutation || dY.rows() != tape.pre.rows() || dY.cols() != tape.pre.cols())
    throw ContractError("PaiConvLayer::apply_backward: tape/gradient shape mismatch");
  const PermutationTensor& M = *tape.permutation;
  const std::size_t d = in_width();

  Matrix d_pre = elu_grad(tape.pre);
  auto dp = d_pre.data();
  auto dy = dY.data();
  for (std::size_t k = 0; k < dp.size(); ++k) dp[k] *= dy[k];

  for (std::size_t i = 0; i < d_pre.rows(); ++i)
    for (std::size_t c = 0; c < d_pre.cols(); ++c) bias.grad(0, c) += d_pre(i, c);

  Matrix dW = kernels::matmul_tn(anisotropic_ ? tape.V : tape.U, d_pre);
  if (active_fault() == Fault::kBackwardSign)
    for (double& v : dW.data()) v = -v;
  accumulate(weight.grad, dW);

  Matrix dV;
  if (anisotropic_) {
    dV = kernels::matmul_nt(d_pre, weight.value);
  } else {
    const Matrix dU = kernels::matmul_nt(d_pre, weight.value);
    const double inv = 1.0 / static_cast<double>(kernel_count_);
    dV = Matrix(M.n, kernel_count_ * d);
    for (std::size_t i = 0; i < M.n; ++i)
      for (std::size_t l = 0; l < kernel_count_; ++l)
        for (std::size_t c = 0; c < d; ++c) dV(i, l * d + c) = dU(i, c) * inv;
  }

  LayerGrads g;
  kernels::resample_backward(tape.X, M.weights, M.K, dV, g.d_X,
                             permutation_grad ? &g.d_weights : nullptr);
  return g;
}

Matrix PaiConvLayer::forward(const PointCloud& cloud, const NeighborIndex& nbr,
                             std::shared_ptr<const PermutationTensor> M, LayerTape& tape) const {
  const std::size_t df = cloud.features ? cloud.features->cols() : 0;
  if (df != feature_width_)
    throw ContractError("PaiConvLayer::forward: expected " + std::to_string(feature_width_) +
                        " feature columns, got " + std::to_string(df));
  const Matrix code = encode_position(cloud, nbr, position, &tape.position);
  return apply(assemble_features(code, cloud.features ? &*cloud.features : nullptr, nbr),
               std::move(M), tape);
}

LayerGrads PaiConvLayer::backward(const LayerTape& tape, const NeighborIndex& nbr,
                                  const Matrix& dY, bool permutation_grad) {
  LayerGrads g = apply_backward(tape, dY, permutation_grad);
  const std::size_t dr = position.width();
  const std::size_t rows = nbr.n * nbr.k;
  Matrix d_code(rows, dr);
  g.d_features = Matrix(nbr.n, feature_width_);
  for (std::size_t i = 0; i < nbr.n; ++i) {
    for (std::size_t j = 0; j < nbr.k; ++j) {
      const auto dx = g.d_X.row(i * nbr.k + j);
      std::copy(dx.begin(), dx.begin() + static_cast<std::ptrdiff_t>(dr),
                d_code.row(i * nbr.k + j).begin());
      auto df = g.d_features.row(nbr(i, j));
      for (std::size_t c = 0; c < feature_width_; ++c) df[c] += dx[dr + c];
    }
  }
  g.d_position_in = encode_position_backward(position, tape.position, d_code);
  return g;
}

}  // namespace paiconv

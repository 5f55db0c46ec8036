#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "paiconv/paiconv.hpp"

namespace paiconv {

enum class Pooling { kMax, kSum, kMaxAndSum };

std::string_view pooling_name(Pooling p);
Pooling parse_pooling(std::string_view name);

/// Classification network shape. Defaults are the full-size ModelNet40
/// setting; desk() is the small configuration used for synthetic data. The
/// desk network max-pools only: without batch normalization, sum pooling over
/// hundreds of points scales gradients enough to diverge at desk learning
/// rates.
struct ClassifierConfig {
  std::vector<std::size_t> conv_channels{64, 64, 128, 256};
  std::size_t aggregate_width = 2048;
  std::vector<std::size_t> fc_widths{512, 40};  // last entry = class count
  std::size_t neighbors = 40;                   // K, self included
  std::size_t kernel_points = 32;               // L, origin included
  std::size_t position_width = 8;               // d_r
  double dropout = 0.5;
  std::vector<std::size_t> downsample_ratios;   // empty = no downsampling
  Pooling pooling = Pooling::kMaxAndSum;
  Variant variant = Variant::kFull;

  std::size_t num_classes() const { return fc_widths.empty() ? 0 : fc_widths.back(); }
  std::size_t pooled_width() const {
    return pooling == Pooling::kMaxAndSum ? 2 * aggregate_width : aggregate_width;
  }
  void validate() const;

  static ClassifierConfig desk(std::size_t num_classes = 3);
};

struct DenseLayer {
  Param weight;  // in x out
  Param bias;    // 1 x out
};

/// All network parameters with their gradient buffers and momentum slots.
struct ClassifierState {
  ClassifierConfig config;
  VariantConfig variant;
  Param kernel;  // L x 3; trained only for the learnable_kernel variant
  std::vector<PaiConvLayer> convs;
  DenseLayer aggregate;
  std::vector<DenseLayer> fcs;
  std::vector<std::string> class_names;

  /// Parameters the optimizer updates.
  template <typename Fn>
  void for_each_trainable(Fn&& fn) {
    if (variant.learnable_kernel) fn(kernel);
    for (auto& c : convs) c.for_each_param(fn);
    fn(aggregate.weight);
    fn(aggregate.bias);
    for (auto& f : fcs) {
      fn(f.weight);
      fn(f.bias);
    }
  }

  /// Every stored tensor, including a frozen kernel lattice.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn(kernel);
    for (auto& c : convs) c.for_each_param(fn);
    fn(aggregate.weight);
    fn(aggregate.bias);
    for (auto& f : fcs) {
      fn(f.weight);
      fn(f.bias);
    }
  }

  void zero_grad();
};

ClassifierState build(const ClassifierConfig& config, Rng& rng);

/// Number of trainable scalars. The learnable kernel contributes (L-1)*3; the
/// origin row is fixed.
std::size_t count_params(const ClassifierState& state);

/// Neighbor/permutation data for one point set. Without downsampling every
/// conv stage shares a single geometry.
struct StageGeometry {
  PointCloud cloud;  // coordinates only
  SampleMap sample;  // rows of the previous point set kept here
  NeighborIndex nbr;
  Matrix local;
  std::shared_ptr<const PermutationTensor> permutation;
};

struct ClassifierTape {
  std::size_t input_points = 0;
  std::vector<StageGeometry> geometry;
  std::vector<std::size_t> stage_geometry;            // stage -> geometry
  std::vector<std::vector<std::uint32_t>> final_rows;  // stage -> rows feeding the final set
  std::vector<LayerTape> conv;
  std::vector<Matrix> conv_out;
  Matrix concat;
  Matrix aggregate_pre;
  Matrix aggregate_out;
  std::vector<std::uint32_t> argmax;  // per aggregate channel (max pooling)
  Matrix pooled;
  std::vector<Matrix> fc_in;    // post-dropout inputs
  std::vector<Matrix> fc_mask;  // dropout scale per input entry (empty = none)
  std::vector<Matrix> fc_pre;
  Matrix logits;                // 1 x C

  std::size_t bytes() const;
};

struct ForwardOptions {
  bool training = false;
  /// Applied to every neighbor table right after construction. Used to
  /// shuffle neighbor order in invariance tests.
  std::function<void(NeighborIndex&)> neighbor_hook;
};

/// Class logits for one cloud. `rng` drives dropout masks and random
/// downsampling; with training=false and no downsampling it is unused.
ClassifierTape forward_logits(const ClassifierState& state, const PointCloud& cloud, Rng& rng,
                              const ForwardOptions& options = {});

/// Accumulates parameter gradients given d(loss)/d(logits). When
/// `d_coords` is non-null it receives d(loss)/d(input coordinates), holding
/// neighbor indices fixed.
void backward(ClassifierState& state, const ClassifierTape& tape, const Matrix& d_logits,
              Matrix* d_coords = nullptr);

struct LossAndGrad {
  double loss = 0.0;
  Matrix d_logits;
};

/// Softmax cross-entropy with log-sum-exp stabilization.
LossAndGrad cross_entropy(const Matrix& logits, std::size_t label);

std::size_t argmax_class(const Matrix& logits);

/// ASCII checkpoint: header line, `key value` config lines, then one
/// `tensor NAME ROWS COLS` block per tensor with 17-significant-digit values.
void save_checkpoint(const ClassifierState& state, std::ostream& out);
void save_checkpoint(const ClassifierState& state, const std::string& path);
ClassifierState load_checkpoint(std::istream& in);
ClassifierState load_checkpoint(const std::string& path);

}  // namespace paiconv

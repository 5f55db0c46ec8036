#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "paiconv/dataio.hpp"
#include "paiconv/netcls.hpp"

namespace paiconv {

struct TrainConfig {
  double lr_init = 0.1;
  double lr_final = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augmentation;

  void validate() const;

  /// Recipe used with ClassifierConfig::desk(): the schedule shape of the
  /// full-size recipe at a tenth of its learning rate.
  static TrainConfig desk();
};

struct Metrics {
  double loss = 0.0;
  double oa = 0.0;  // overall accuracy
  double ma = 0.0;  // mean per-class recall over classes present
  std::size_t total = 0;
  std::size_t correct = 0;
};

/// Cosine annealing from lr_init at epoch 0 to lr_final at epoch epochs-1.
double cosine_lr(std::size_t epoch, const TrainConfig& config);

/// Heavy-ball momentum on the accumulated gradients: v = m v + g; w -= lr v.
/// Throws NumericError if a gradient or updated value is non-finite.
void sgd_step(ClassifierState& state, double lr, double momentum);

/// One pass over `data` in an rng-shuffled order with minibatch-mean
/// gradients. Loss and OA are running values over the augmented samples.
Metrics train_epoch(ClassifierState& state, const Dataset& data, const TrainConfig& config,
                    std::size_t epoch, Rng& rng);

/// Single forward pass per sample in inference mode.
Metrics evaluate(const ClassifierState& state, const Dataset& data);

/// Accuracy metrics from (label, prediction) pairs.
Metrics accuracy_metrics(const std::vector<std::size_t>& labels,
                         const std::vector<std::size_t>& predictions, std::size_t num_classes);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  Metrics train;
};

/// Runs config.epochs epochs; `on_epoch` sees the state after each one.
void fit(ClassifierState& state, const Dataset& data, const TrainConfig& config,
         const std::function<void(const EpochRecord&, const ClassifierState&)>& on_epoch = {});

struct AblationRow {
  Variant variant = Variant::kFull;
  std::uint64_t seed = 0;
  Metrics test;
};

/// Trains every variant once per seed on `train` (network and training seeds
/// both set to the seed) and evaluates on `test`.
std::vector<AblationRow> run_ablation(const ClassifierConfig& base, const TrainConfig& train_config,
                                      const Dataset& train, const Dataset& test,
                                      const std::vector<Variant>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const AblationRow&)>& on_row = {});

/// variant,seed,oa,ma
void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out);
/// variant,runs,oa_mean,oa_std,ma_mean,ma_std in first-seen variant order.
void write_ablation_summary_csv(const std::vector<AblationRow>& rows, std::ostream& out);

}  // namespace paiconv

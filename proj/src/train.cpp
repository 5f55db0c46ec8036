#include "paiconv/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <ostream>

namespace paiconv {

void TrainConfig::validate() const {
  if (!(lr_final > 0.0 && lr_final <= lr_init))
    throw ContractError("train config: need 0 < lr_final <= lr_init");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("train config: momentum must be in [0, 1)");
  if (epochs == 0) throw ContractError("train config: epochs must be >= 1");
  if (batch_size == 0) throw ContractError("train config: batch_size must be >= 1");
  augmentation.validate();
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.lr_init = 0.01;
  c.lr_final = 0.001;
  return c;
}

double cosine_lr(std::size_t epoch, const TrainConfig& config) {
  if (epoch >= config.epochs) throw ContractError("cosine_lr: epoch out of range");
  if (config.epochs == 1) return config.lr_init;
  const double progress = static_cast<double>(epoch) / static_cast<double>(config.epochs - 1);
  // Pin the endpoints so they are exact rather than off by cos() rounding.
  if (epoch == 0) return config.lr_init;
  if (epoch + 1 == config.epochs) return config.lr_final;
  return config.lr_final +
         0.5 * (config.lr_init - config.lr_final) * (1.0 + std::cos(M_PI * progress));
}

void sgd_step(ClassifierState& state, double lr, double momentum) {
  state.for_each_trainable([&](Param& p) {
    require_finite(p.grad, p.name + " gradient");
    auto v = p.velocity.data();
    auto g = p.grad.data();
    auto w = p.value.data();
    const bool is_kernel = &p == &state.kernel;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (is_kernel && k < 3) continue;  // origin stays fixed
      v[k] = momentum * v[k] + g[k];
      w[k] -= lr * v[k];
    }
    require_finite(p.value, p.name);
  });
  if (state.variant.learnable_kernel) state.variant.kernel.points = state.kernel.value;
}

Metrics accuracy_metrics(const std::vector<std::size_t>& labels,
                         const std::vector<std::size_t>& predictions, std::size_t num_classes) {
  if (labels.size() != predictions.size()) throw ContractError("accuracy_metrics: size mismatch");
  Metrics m;
  std::vector<std::size_t> total(num_classes, 0), correct(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw ContractError("accuracy_metrics: label out of range");
    ++total[labels[i]];
    if (labels[i] == predictions[i]) {
      ++correct[labels[i]];
      ++m.correct;
    }
  }
  m.total = labels.size();
  m.oa = m.total ? static_cast<double>(m.correct) / static_cast<double>(m.total) : 0.0;
  double recall_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (total[c] == 0) {
      std::cerr << "warning: class " << c << " has no samples; excluded from mean accuracy\n";
      continue;
    }
    recall_sum += static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    ++present;
  }
  m.ma = present ? recall_sum / static_cast<double>(present) : 0.0;
  return m;
}

Metrics train_epoch(ClassifierState& state, const Dataset& data, const TrainConfig& config,
                    std::size_t epoch, Rng& rng) {
  if (data.size() == 0) throw ContractError("train_epoch: empty dataset");
  config.validate();
  data.validate();
  const Rng epoch_rng(rng.next_u64());
  Rng shuffle = epoch_rng.stream(Stream::kShuffle);
  Rng noise = epoch_rng.stream(Stream::kAugment);
  Rng dropout = epoch_rng.stream(Stream::kDropout);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle.shuffle(order);

  const double lr = cosine_lr(epoch, config);
  std::vector<std::size_t> labels, predictions;
  double loss_sum = 0.0;
  ForwardOptions options;
  options.training = true;

  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t stop = std::min(order.size(), start + config.batch_size);
    state.zero_grad();
    for (std::size_t b = start; b < stop; ++b) {
      const Sample& sample = data.samples[order[b]];
      const PointCloud cloud =
          config.augment ? augment(sample.cloud, config.augmentation, noise) : sample.cloud;
      const ClassifierTape tape = forward_logits(state, cloud, dropout, options);
      const LossAndGrad lg = cross_entropy(tape.logits, sample.label);
      backward(state, tape, lg.d_logits);
      loss_sum += lg.loss;
      labels.push_back(sample.label);
      predictions.push_back(argmax_class(tape.logits));
    }
    const double inv = 1.0 / static_cast<double>(stop - start);
    state.for_each_trainable([&](Param& p) {
      for (double& g : p.grad.data()) g *= inv;
    });
    sgd_step(state, lr, config.momentum);
  }
  Metrics m = accuracy_metrics(labels, predictions, data.num_classes());
  m.loss = loss_sum / static_cast<double>(data.size());
  return m;
}

namespace {

std::uint64_t content_hash(const Matrix& m) {
  std::uint64_t h = Rng::splitmix64(m.rows());
  for (double v : m.data()) h = Rng::splitmix64(h ^ std::bit_cast<std::uint64_t>(v));
  return h;
}

}  // namespace

Metrics evaluate(const ClassifierState& state, const Dataset& data) {
  data.validate();
  std::vector<std::size_t> labels, predictions;
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    // Downsampling (if configured) is seeded from the cloud's contents so
    // evaluation does not depend on dataset order.
    Rng rng = Rng(0).stream(Stream::kSampling, content_hash(data.samples[i].cloud.coords));
    const ClassifierTape tape = forward_logits(state, data.samples[i].cloud, rng);
    loss_sum += cross_entropy(tape.logits, data.samples[i].label).loss;
    labels.push_back(data.samples[i].label);
    predictions.push_back(argmax_class(tape.logits));
  }
  Metrics m = accuracy_metrics(labels, predictions, data.num_classes());
  m.loss = data.size() ? loss_sum / static_cast<double>(data.size()) : 0.0;
  return m;
}

void fit(ClassifierState& state, const Dataset& data, const TrainConfig& config,
         const std::function<void(const EpochRecord&, const ClassifierState&)>& on_epoch) {
  config.validate();
  Rng rng = Rng(config.seed).stream(Stream::kRoot);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = cosine_lr(e, config);
    rec.train = train_epoch(state, data, config, e, rng);
    if (on_epoch) on_epoch(rec, state);
  }
}

std::vector<AblationRow> run_ablation(const ClassifierConfig& base, const TrainConfig& train_config,
                                      const Dataset& train, const Dataset& test,
                                      const std::vector<Variant>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    for (std::uint64_t seed : seeds) {
      ClassifierConfig cfg = base;
      cfg.variant = v;
      Rng rng(seed);
      ClassifierState state = build(cfg, rng);
      TrainConfig tc = train_config;
      tc.seed = seed;
      fit(state, train, tc);
      rows.push_back({v, seed, evaluate(state, test)});
      if (on_row) on_row(rows.back());
    }
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "variant,seed,oa,ma\n" << std::setprecision(6) << std::fixed;
  for (const auto& r : rows)
    out << variant_name(r.variant) << ',' << r.seed << ',' << r.test.oa << ',' << r.test.ma << '\n';
  out.unsetf(std::ios::fixed);
}

void write_ablation_summary_csv(const std::vector<AblationRow>& rows, std::ostream& out) {
  std::vector<Variant> order;
  for (const auto& r : rows)
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  out << "variant,runs,oa_mean,oa_std,ma_mean,ma_std\n" << std::setprecision(6) << std::fixed;
  for (Variant v : order) {
    std::vector<double> oa, ma;
    for (const auto& r : rows) {
      if (r.variant != v) continue;
      oa.push_back(r.test.oa);
      ma.push_back(r.test.ma);
    }
    auto stats = [](const std::vector<double>& x) {
      const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
      double var = 0.0;
      for (double v : x) var += (v - mean) * (v - mean);
      return std::pair{mean, x.size() > 1 ? std::sqrt(var / static_cast<double>(x.size() - 1)) : 0.0};
    };
    const auto [oa_mean, oa_std] = stats(oa);
    const auto [ma_mean, ma_std] = stats(ma);
    out << variant_name(v) << ',' << oa.size() << ',' << oa_mean << ',' << oa_std << ',' << ma_mean
        << ',' << ma_std << '\n';
  }
  out.unsetf(std::ios::fixed);
}

}  // namespace paiconv

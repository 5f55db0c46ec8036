#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "paiconv/netcls.hpp"
#include "paiconv/train.hpp"

using namespace paiconv;

namespace {

PointCloud ball_cloud(std::size_t n, Rng& rng) {
  PointCloud c{Matrix(n, 3), std::nullopt};
  for (std::size_t i = 0; i < n; ++i) {
    double x, y, z;
    do {
      x = rng.uniform(-1, 1);
      y = rng.uniform(-1, 1);
      z = rng.uniform(-1, 1);
    } while (x * x + y * y + z * z > 1.0);
    c.coords(i, 0) = x;
    c.coords(i, 1) = y;
    c.coords(i, 2) = z;
  }
  return c;
}

ClassifierConfig golden_micro() {
  ClassifierConfig c;
  c.conv_channels = {8, 8};
  c.aggregate_width = 32;
  c.fc_widths = {16, 3};
  c.neighbors = 8;
  c.kernel_points = 8;
  c.position_width = 8;
  c.pooling = Pooling::kMaxAndSum;
  return c;
}

ClassifierConfig small(Variant v = Variant::kFull) {
  ClassifierConfig c;
  c.conv_channels = {4, 4};
  c.aggregate_width = 6;
  c.fc_widths = {5, 3};
  c.neighbors = 4;
  c.kernel_points = 5;
  c.position_width = 3;
  c.variant = v;
  return c;
}

PointCloud reorder(const PointCloud& c, const std::vector<std::uint32_t>& perm) {
  PointCloud out{Matrix(c.size(), 3), std::nullopt};
  for (std::size_t r = 0; r < c.size(); ++r)
    for (std::size_t a = 0; a < 3; ++a) out.coords(r, a) = c.coords(perm[r], a);
  return out;
}

// Counting oracle: position MLP (7*d_r + d_r), filter (d_in*L*d_out + d_out)
// per conv layer; dense layers in*out + out.
std::size_t count_oracle(const ClassifierConfig& c) {
  std::size_t total = 0, feature = 0, concat = 0;
  const std::size_t dr = c.position_width;
  for (std::size_t w : c.conv_channels) {
    const std::size_t din = dr + feature;
    const std::size_t rows = c.variant == Variant::kIsotropic ? din : din * c.kernel_points;
    total += 7 * dr + dr + rows * w + w;
    feature = w;
    concat += w;
  }
  total += concat * c.aggregate_width + c.aggregate_width;
  std::size_t in = c.pooled_width();
  for (std::size_t w : c.fc_widths) {
    total += in * w + w;
    in = w;
  }
  if (c.variant == Variant::kLearnableKernel) total += (c.kernel_points - 1) * 3;
  return total;
}

}  // namespace

TEST(Build, GoldenParameterCount) {
  Rng rng(0);
  const ClassifierState s = build(golden_micro(), rng);
  EXPECT_EQ(count_params(s), 3315u);
  EXPECT_EQ(count_params(s), count_oracle(golden_micro()));
}

TEST(Build, ParameterCountsMatchOracleForEveryVariant) {
  for (Variant v : kAllVariants) {
    ClassifierConfig c = golden_micro();
    c.variant = v;
    Rng rng(1);
    EXPECT_EQ(count_params(build(c, rng)), count_oracle(c)) << variant_name(v);
  }
}

TEST(Build, EmptyStateHasNoParameters) { EXPECT_EQ(count_params(ClassifierState{}), 0u); }

TEST(Build, InvalidConfigsRejected) {
  Rng rng(2);
  auto bad = [&](auto mutate) {
    ClassifierConfig c = small();
    mutate(c);
    EXPECT_THROW(build(c, rng), ContractError);
  };
  bad([](ClassifierConfig& c) { c.conv_channels.clear(); });
  bad([](ClassifierConfig& c) { c.conv_channels[1] = 0; });
  bad([](ClassifierConfig& c) { c.fc_widths.clear(); });
  bad([](ClassifierConfig& c) { c.kernel_points = 1; });
  bad([](ClassifierConfig& c) { c.neighbors = 0; });
  bad([](ClassifierConfig& c) { c.dropout = 1.0; });
  bad([](ClassifierConfig& c) { c.downsample_ratios = {2}; });
  bad([](ClassifierConfig& c) { c.downsample_ratios = {2, 0}; });
}

TEST(Forward, WithoutDownsamplingAllStagesShareOneGeometry) {
  Rng rng(3);
  const ClassifierState s = build(small(), rng);
  const ClassifierTape t = forward_logits(s, ball_cloud(30, rng), rng);
  ASSERT_EQ(t.geometry.size(), 1u);
  EXPECT_EQ(t.stage_geometry, (std::vector<std::size_t>{0, 0}));
  EXPECT_EQ(t.conv[0].permutation.get(), t.conv[1].permutation.get());
}

TEST(Forward, DownsamplingBuildsGeometryPerStage) {
  Rng rng(4);
  ClassifierConfig c = small();
  c.downsample_ratios = {2, 2};
  const ClassifierState s = build(c, rng);
  const ClassifierTape t = forward_logits(s, ball_cloud(40, rng), rng);
  ASSERT_EQ(t.geometry.size(), 2u);
  EXPECT_EQ(t.geometry[0].cloud.size(), 20u);
  EXPECT_EQ(t.geometry[1].cloud.size(), 10u);
  EXPECT_EQ(t.concat.rows(), 10u);
  EXPECT_TRUE(t.logits.all_finite());
}

TEST(Forward, InferenceIsDeterministic) {
  Rng rng(5);
  const ClassifierState s = build(small(), rng);
  const PointCloud c = ball_cloud(25, rng);
  Rng a(1), b(2);
  EXPECT_EQ(forward_logits(s, c, a).logits, forward_logits(s, c, b).logits);
}

TEST(Forward, DropoutOnlyWhenTraining) {
  Rng rng(6);
  ClassifierConfig c = small();
  c.dropout = 0.5;
  const ClassifierState s = build(c, rng);
  const PointCloud cloud = ball_cloud(25, rng);
  Rng a(1), b(2);
  ForwardOptions train;
  train.training = true;
  const ClassifierTape ta = forward_logits(s, cloud, a, train);
  const ClassifierTape tb = forward_logits(s, cloud, b, train);
  EXPECT_NE(ta.logits, tb.logits);
  for (double m : ta.fc_mask[0].data()) EXPECT_TRUE(m == 0.0 || m == 2.0);
}

TEST(Forward, PointOrderInvariance) {
  Rng rng(7);
  for (Variant v : {Variant::kFull, Variant::kSoftmax, Variant::kIsotropic}) {
    const ClassifierState s = build(small(v), rng);
    const PointCloud c = ball_cloud(50, rng);
    std::vector<std::uint32_t> perm(50);
    std::iota(perm.begin(), perm.end(), 0u);
    rng.shuffle(perm);
    Rng a(0), b(0);
    const Matrix la = forward_logits(s, c, a).logits;
    const Matrix lb = forward_logits(s, reorder(c, perm), b).logits;
    EXPECT_LT(oracle::max_abs_diff(la, lb), 1e-7) << variant_name(v);
  }
}

TEST(Forward, SinglePointCloudIsFinite) {
  Rng rng(8);
  const ClassifierState s = build(small(), rng);
  const ClassifierTape t = forward_logits(s, ball_cloud(1, rng), rng);
  EXPECT_EQ(t.logits.cols(), 3u);
  EXPECT_TRUE(t.logits.all_finite());
}

TEST(Forward, EmptyCloudRejected) {
  Rng rng(9);
  const ClassifierState s = build(small(), rng);
  EXPECT_THROW(forward_logits(s, PointCloud{Matrix(0, 3), std::nullopt}, rng), ContractError);
}

// With K = 1 every point only sees itself, so duplicating all points
// duplicates every per-point feature row.
TEST(Pooling, DuplicatedPoints) {
  Rng rng(10);
  const PointCloud c = ball_cloud(12, rng);
  PointCloud twice{Matrix(24, 3), std::nullopt};
  for (std::size_t r = 0; r < 24; ++r)
    for (std::size_t a = 0; a < 3; ++a) twice.coords(r, a) = c.coords(r % 12, a);
  for (Pooling p : {Pooling::kMax, Pooling::kSum}) {
    ClassifierConfig cfg = small();
    cfg.neighbors = 1;
    cfg.pooling = p;
    Rng init(11);
    const ClassifierState s = build(cfg, init);
    Rng a(0), b(0);
    const ClassifierTape t1 = forward_logits(s, c, a), t2 = forward_logits(s, twice, b);
    if (p == Pooling::kMax) {
      EXPECT_EQ(t1.logits, t2.logits);
    } else {
      for (std::size_t k = 0; k < t1.pooled.size(); ++k)
        EXPECT_NEAR(t2.pooled.data()[k], 2.0 * t1.pooled.data()[k], 1e-12);
    }
  }
}

TEST(Pooling, MaxAndSumConcatenates) {
  Rng rng(12);
  ClassifierConfig cfg = small();
  cfg.pooling = Pooling::kMaxAndSum;
  const ClassifierState s = build(cfg, rng);
  const ClassifierTape t = forward_logits(s, ball_cloud(9, rng), rng);
  ASSERT_EQ(t.pooled.cols(), 2 * cfg.aggregate_width);
  for (std::size_t ch = 0; ch < cfg.aggregate_width; ++ch) {
    double mx = -INFINITY, sum = 0.0;
    for (std::size_t i = 0; i < t.aggregate_out.rows(); ++i) {
      mx = std::max(mx, t.aggregate_out(i, ch));
      sum += t.aggregate_out(i, ch);
    }
    EXPECT_EQ(t.pooled(0, ch), mx);
    EXPECT_NEAR(t.pooled(0, cfg.aggregate_width + ch), sum, 1e-12);
  }
  EXPECT_THROW(parse_pooling("mean"), ContractError);
}

TEST(CrossEntropy, EqualLogitsGiveLogC) {
  const LossAndGrad lg = cross_entropy(Matrix(1, 5, 0.3), 2);
  EXPECT_NEAR(lg.loss, std::log(5.0), 1e-15);
  EXPECT_NEAR(lg.d_logits(0, 2), 0.2 - 1.0, 1e-15);
  EXPECT_NEAR(lg.d_logits(0, 0), 0.2, 1e-15);
}

TEST(CrossEntropy, ConfidentCorrectClassHasVanishingLossAndStaysFinite) {
  EXPECT_LT(cross_entropy(Matrix::from_rows({{50.0, 0.0, 0.0}}), 0).loss, 1e-20);
  const LossAndGrad lg = cross_entropy(Matrix::from_rows({{1000.0, -1000.0}}), 1);
  EXPECT_NEAR(lg.loss, 2000.0, 1e-9);
  EXPECT_TRUE(lg.d_logits.all_finite());
}

TEST(CrossEntropy, GradientMatchesClosedFormAndFiniteDifferences) {
  Rng rng(13);
  for (int t = 0; t < 50; ++t) {
    Matrix z(1, 4);
    for (double& v : z.data()) v = 3.0 * rng.normal();
    const std::size_t label = rng.below(4);
    const LossAndGrad lg = cross_entropy(z, label);
    long double total = 0.0L;
    for (std::size_t c = 0; c < 4; ++c) total += std::exp(static_cast<long double>(z(0, c)));
    for (std::size_t c = 0; c < 4; ++c) {
      const double p = static_cast<double>(std::exp(static_cast<long double>(z(0, c))) / total);
      EXPECT_NEAR(lg.d_logits(0, c), p - (c == label ? 1.0 : 0.0), 1e-14);
      const double h = 1e-6, keep = z(0, c);
      z(0, c) = keep + h;
      const double up = cross_entropy(z, label).loss;
      z(0, c) = keep - h;
      const double down = cross_entropy(z, label).loss;
      z(0, c) = keep;
      // Rounding in the loss is ~1e-16, so the difference quotient is good to ~1e-9.
      EXPECT_NEAR(lg.d_logits(0, c), (up - down) / (2 * h), 1e-8);
    }
  }
}

TEST(CrossEntropy, LabelOutOfRange) {
  EXPECT_THROW(cross_entropy(Matrix(1, 3), 3), ContractError);
}

class NetworkGradient : public ::testing::TestWithParam<Variant> {};

// 2 conv layers of width 4, 8 points; every trainable scalar.
TEST_P(NetworkGradient, MatchesCentralDifferences) {
  Rng rng(14);
  ClassifierConfig cfg = small(GetParam());
  cfg.dropout = 0.0;
  ClassifierState s = build(cfg, rng);
  s.for_each_trainable([&](Param& p) {
    if (p.name.find("bias") != std::string::npos)
      for (double& v : p.value.data()) v = 0.1 * rng.normal();
  });
  const PointCloud c = ball_cloud(8, rng);
  auto loss = [&] {
    Rng r(0);
    return cross_entropy(forward_logits(s, c, r).logits, 1).loss;
  };
  Rng r(0);
  const ClassifierTape tape = forward_logits(s, c, r);
  s.zero_grad();
  backward(s, tape, cross_entropy(tape.logits, 1).d_logits);

  const double h = 1e-5;
  std::size_t checked = 0, bad = 0;
  double worst = 0.0;
  s.for_each_trainable([&](Param& p) {
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (&p == &s.kernel && k < 3) continue;  // origin is fixed
      const double keep = p.value.data()[k];
      p.value.data()[k] = keep + h;
      const double up = loss();
      p.value.data()[k] = keep - h;
      const double down = loss();
      p.value.data()[k] = keep;
      const double e = oracle::rel_err(p.grad.data()[k], (up - down) / (2 * h), 1e-6);
      worst = std::max(worst, e);
      bad += e >= 1e-3;
      ++checked;
    }
  });
  EXPECT_EQ(bad, 0u) << "worst rel-err " << worst;
  EXPECT_EQ(checked, count_params(s));
}

INSTANTIATE_TEST_SUITE_P(Variants, NetworkGradient, ::testing::ValuesIn(kAllVariants),
                         [](const auto& info) { return std::string(variant_name(info.param)); });

TEST(LearnableKernel, ZeroLearningRateMatchesFullModel) {
  Rng r1(15), r2(15);
  ClassifierState full = build(small(Variant::kFull), r1);
  ClassifierState learn = build(small(Variant::kLearnableKernel), r2);
  Rng d(16);
  const PointCloud c = ball_cloud(20, d);
  Rng a(0);
  const ClassifierTape t = forward_logits(learn, c, a);
  backward(learn, t, cross_entropy(t.logits, 0).d_logits);
  sgd_step(learn, 0.0, 0.9);
  Rng b(0), e(0);
  EXPECT_EQ(forward_logits(learn, c, b).logits, forward_logits(full, c, e).logits);
}

TEST(Checkpoint, RoundTripIsExact) {
  for (Variant v : {Variant::kFull, Variant::kRandomKernel, Variant::kIsotropic}) {
    Rng rng(17);
    ClassifierConfig cfg = small(v);
    cfg.downsample_ratios = {1, 2};
    ClassifierState s = build(cfg, rng);
    s.class_names = {"a", "b", "c"};
    std::stringstream buf;
    save_checkpoint(s, buf);
    const std::string text = buf.str();
    ClassifierState loaded = load_checkpoint(buf);
    EXPECT_EQ(loaded.class_names, s.class_names);
    EXPECT_EQ(loaded.config.variant, v);
    EXPECT_EQ(loaded.config.downsample_ratios, cfg.downsample_ratios);
    std::stringstream again;
    save_checkpoint(loaded, again);
    EXPECT_EQ(again.str(), text);
    const PointCloud c = ball_cloud(16, rng);
    Rng a(3), b(3);
    EXPECT_EQ(forward_logits(s, c, a).logits, forward_logits(loaded, c, b).logits);
  }
}

TEST(Checkpoint, MalformedInputsRejected) {
  std::stringstream bad("not-a-checkpoint 1\n");
  EXPECT_THROW(load_checkpoint(bad), std::runtime_error);
  Rng rng(18);
  ClassifierState s = build(small(), rng);
  std::stringstream buf;
  save_checkpoint(s, buf);
  std::string text = buf.str();
  std::stringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(load_checkpoint(truncated), std::runtime_error);
  EXPECT_THROW(load_checkpoint(std::string("/nonexistent/model.ckpt")), std::runtime_error);
}

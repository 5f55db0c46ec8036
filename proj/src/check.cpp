#include "paiconv/check.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "paiconv/kernels.hpp"
#include "paiconv/train.hpp"

namespace paiconv {
namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

PointCloud random_ball(std::size_t n, Rng& rng) {
  PointCloud c{Matrix(n, 3), std::nullopt};
  for (std::size_t i = 0; i < n; ++i) {
    double x, y, z;
    do {
      x = rng.uniform(-1.0, 1.0);
      y = rng.uniform(-1.0, 1.0);
      z = rng.uniform(-1.0, 1.0);
    } while (x * x + y * y + z * z > 1.0);
    c.coords(i, 0) = x;
    c.coords(i, 1) = y;
    c.coords(i, 2) = z;
  }
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a.data()[k] - b.data()[k]));
  return d;
}

/// Everything that selects a smooth piece of the loss: neighbor tables,
/// sparsemax supports, ELU branches and max-pool winners.
std::vector<std::uint8_t> activation_pattern(const ClassifierTape& t) {
  std::vector<std::uint8_t> sig;
  auto signs = [&](const Matrix& m) {
    for (double v : m.data()) sig.push_back(v > 0.0);
  };
  for (const auto& g : t.geometry) {
    for (auto i : g.nbr.idx) sig.push_back(static_cast<std::uint8_t>(i & 0xff));
    signs(g.permutation->weights);
  }
  for (const auto& c : t.conv) {
    signs(c.position.pre);
    signs(c.pre);
  }
  signs(t.aggregate_pre);
  for (std::size_t f = 0; f + 1 < t.fc_pre.size(); ++f) signs(t.fc_pre[f]);
  for (auto a : t.argmax) sig.push_back(static_cast<std::uint8_t>(a & 0xff));
  return sig;
}

struct Evaluation {
  double loss;
  std::vector<std::uint8_t> pattern;
};

Evaluation evaluate_loss(const ClassifierState& s, const PointCloud& cloud, std::size_t label) {
  Rng unused(0);
  const ClassifierTape t = forward_logits(s, cloud, unused);
  return {cross_entropy(t.logits, label).loss, activation_pattern(t)};
}

}  // namespace

std::vector<double> simplex_projection_bisection(std::span<const double> z) {
  if (z.empty()) throw ContractError("simplex_projection_bisection: empty input");
  const double top = *std::max_element(z.begin(), z.end());
  // mass(tau) = sum(max(z - tau, 0)) is decreasing; mass(top - 1) >= 1 >= mass(top).
  double lo = top - 1.0, hi = top;
  for (int it = 0; it < 200 && lo < hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    double mass = 0.0;
    for (double v : z) mass += std::max(v - mid, 0.0);
    (mass > 1.0 ? lo : hi) = mid;
  }
  const double tau = 0.5 * (lo + hi);
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::max(z[i] - tau, 0.0);
  return p;
}

InvarianceStats permutation_invariance_trials(Variant variant, std::size_t trials, std::size_t n,
                                              std::size_t K, std::size_t L, double tol,
                                              std::uint64_t seed) {
  ClassifierConfig cfg;
  cfg.conv_channels = {8, 8};
  cfg.aggregate_width = 16;
  cfg.fc_widths = {8, 3};
  cfg.neighbors = K;
  cfg.kernel_points = L;
  cfg.variant = variant;

  InvarianceStats stats;
  const Rng root(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng trial = root.stream(Stream::kCheck, t);
    const ClassifierState state = build(cfg, trial);
    const PointCloud cloud = random_ball(n, trial);

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    trial.shuffle(order);
    PointCloud shuffled{gather_rows(cloud.coords, order), std::nullopt};

    ForwardOptions opts;
    opts.neighbor_hook = [&trial](NeighborIndex& nbr) {
      for (std::size_t i = 0; i < nbr.n; ++i) {
        auto row = nbr.row(i);
        for (std::size_t j = row.size(); j > 2; --j)
          std::swap(row[j - 1], row[1 + trial.below(j - 1)]);
      }
    };
    Rng unused(0);
    const Matrix a = forward_logits(state, cloud, unused).logits;
    const Matrix b = forward_logits(state, shuffled, unused, opts).logits;
    const double d = max_abs_diff(a, b);
    stats.max_diff = std::max(stats.max_diff, d);
    stats.violations += d > tol;
    ++stats.trials;
  }
  return stats;
}

double gradient_rel_err(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

ClassifierConfig micro_config(Variant variant) {
  ClassifierConfig c;
  c.conv_channels = {4, 4};
  c.aggregate_width = 4;
  c.fc_widths = {4, 3};
  c.neighbors = 3;
  c.kernel_points = 4;
  c.position_width = 4;
  c.variant = variant;
  return c;
}

GradCheckStats network_grad_check(const ClassifierConfig& config, std::size_t n, double h,
                                  std::uint64_t seed) {
  Rng rng = Rng(seed).stream(Stream::kCheck);
  ClassifierState state = build(config, rng);
  PointCloud cloud = random_ball(n, rng);
  const std::size_t label = static_cast<std::size_t>(rng.below(config.num_classes()));

  Rng unused(0);
  const ClassifierTape tape = forward_logits(state, cloud, unused);
  const std::vector<std::uint8_t> base = activation_pattern(tape);
  state.zero_grad();
  Matrix d_coords;
  backward(state, tape, cross_entropy(tape.logits, label).d_logits, &d_coords);

  GradCheckStats stats;
  auto probe = [&](double& x, double analytic, const std::string& name) {
    const double saved = x;
    x = saved + h;
    const Evaluation plus = evaluate_loss(state, cloud, label);
    x = saved - h;
    const Evaluation minus = evaluate_loss(state, cloud, label);
    x = saved;
    if (plus.pattern != base || minus.pattern != base) {
      ++stats.skipped;
      return;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * h);
    const double err = gradient_rel_err(analytic, numeric);
    ++stats.checked;
    if (err > stats.max_rel_err || stats.worst.empty()) {
      stats.max_rel_err = std::max(err, stats.max_rel_err);
      if (err >= stats.max_rel_err) stats.worst = name;
    }
  };

  state.for_each_trainable([&](Param& p) {
    const std::size_t first_row = &p == &state.kernel ? 1 : 0;
    for (std::size_t r = first_row; r < p.value.rows(); ++r)
      for (std::size_t c = 0; c < p.value.cols(); ++c)
        probe(p.value(r, c), p.grad(r, c),
              p.name + "[" + std::to_string(r) + "," + std::to_string(c) + "]");
  });
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      probe(cloud.coords(i, c), d_coords(i, c),
            "coords[" + std::to_string(i) + "," + std::to_string(c) + "]");
  return stats;
}

CheckResult check_sparsemax_oracle(std::size_t vectors, std::uint64_t seed) {
  Rng rng = Rng(seed).stream(Stream::kCheck, 1);
  double worst = 0.0, worst_simplex = 0.0;
  for (std::size_t v = 0; v < vectors; ++v) {
    const std::size_t len = 1 + static_cast<std::size_t>(rng.below(6));
    const double scale = rng.uniform(0.1, 5.0);
    std::vector<double> z(len);
    for (double& x : z) x = scale * rng.normal();
    const std::vector<double> p = sparsemax(z);
    const std::vector<double> q = simplex_projection_bisection(z);
    double sum = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      worst = std::max(worst, std::abs(p[i] - q[i]));
      worst_simplex = std::max(worst_simplex, -p[i]);
      sum += p[i];
    }
    worst_simplex = std::max(worst_simplex, std::abs(sum - 1.0));
  }
  return {"sparsemax_projection_oracle", worst <= 1e-6 && worst_simplex <= 1e-12,
          "max |p - oracle| = " + fmt(worst) + ", simplex violation = " + fmt(worst_simplex)};
}

CheckResult check_sparsemax_jacobian(std::size_t vectors, std::uint64_t seed) {
  Rng rng = Rng(seed).stream(Stream::kCheck, 2);
  constexpr double h = 1e-6;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t v = 0; v < vectors; ++v) {
    const std::size_t len = 2 + static_cast<std::size_t>(rng.below(7));
    std::vector<double> z(len), u(len);
    for (double& x : z) x = rng.normal();
    for (double& x : u) x = rng.normal();
    const std::vector<double> p = sparsemax(z);
    const std::vector<double> jvp = sparsemax_jacobian_vp(p, u);
    for (std::size_t k = 0; k < len; ++k) {
      std::vector<double> zp = z, zm = z;
      zp[k] += h;
      zm[k] -= h;
      const std::vector<double> pp = sparsemax(zp), pm = sparsemax(zm);
      bool same = true;
      for (std::size_t i = 0; i < len; ++i)
        same = same && (pp[i] > 0.0) == (p[i] > 0.0) && (pm[i] > 0.0) == (p[i] > 0.0);
      if (!same) continue;
      // The Jacobian is symmetric, so (J^T u)_k = sum_i u_i dp_i/dz_k.
      double numeric = 0.0;
      for (std::size_t i = 0; i < len; ++i) numeric += u[i] * (pp[i] - pm[i]) / (2.0 * h);
      worst = std::max(worst, gradient_rel_err(jvp[k], numeric));
      ++checked;
    }
  }
  return {"sparsemax_jacobian", worst < 1e-6 && checked > 0,
          std::to_string(checked) + " entries, max rel-err = " + fmt(worst)};
}

CheckResult check_column_stochastic(std::uint64_t seed) {
  Rng rng = Rng(seed).stream(Stream::kCheck, 3);
  const std::size_t n = 50, K = 10;
  const PointCloud cloud = random_ball(n, rng);
  const NeighborIndex nbr = knn_bruteforce(cloud, K);
  const Matrix local = local_positions(cloud, nbr);
  const Matrix kernel = fibonacci_lattice(16).points;
  double worst = 0.0;
  for (Normalizer mode : {Normalizer::kSparsemax, Normalizer::kSoftmax, Normalizer::kOrderOneHot,
                          Normalizer::kUniform}) {
    const PermutationTensor M = build_permutation(local, K, kernel, mode);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t l = 0; l < M.L; ++l) {
        double sum = 0.0;
        for (std::size_t j = 0; j < K; ++j) {
          const double w = M.weights(i * K + j, l);
          worst = std::max(worst, -w);
          sum += w;
        }
        worst = std::max(worst, std::abs(sum - 1.0));
      }
      if (mode != Normalizer::kUniform) {
        worst = std::max(worst, std::abs(M.weights(i * K, 0) - 1.0));
        for (std::size_t j = 1; j < K; ++j) worst = std::max(worst, std::abs(M.weights(i * K + j, 0)));
      }
    }
  }
  return {"permutation_columns_stochastic", worst <= 1e-12, "max violation = " + fmt(worst)};
}

CheckResult check_permutation_invariance(std::size_t trials, std::uint64_t seed) {
  const InvarianceStats s = permutation_invariance_trials(Variant::kFull, trials, 64, 8, 8, 1e-7, seed);
  return {"permutation_invariance", s.violations == 0,
          std::to_string(s.trials) + " clouds, max |d logits| = " + fmt(s.max_diff)};
}

CheckResult check_no_permutation_witness(std::size_t trials, std::uint64_t seed) {
  const InvarianceStats s =
      permutation_invariance_trials(Variant::kNoPermutation, trials, 64, 8, 8, 1e-7, seed);
  const double rate = s.trials ? static_cast<double>(s.violations) / s.trials : 0.0;
  return {"no_permutation_witness", rate >= 0.9,
          std::to_string(s.violations) + "/" + std::to_string(s.trials) + " trials broke invariance"};
}

CheckResult check_gradients(std::size_t instances, std::uint64_t seed) {
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  std::string worst_name;
  for (std::size_t i = 0; i < instances; ++i) {
    const GradCheckStats s = network_grad_check(micro_config(), 4, 1e-5, seed + i);
    checked += s.checked;
    skipped += s.skipped;
    if (s.max_rel_err >= worst) {
      worst = s.max_rel_err;
      worst_name = s.worst;
    }
  }
  return {"gradient_finite_difference", worst < 1e-4 && checked > 0,
          std::to_string(checked) + " entries (" + std::to_string(skipped) +
              " near a kink skipped), max rel-err = " + fmt(worst) + " at " + worst_name};
}

CheckResult check_lattice_quality(std::uint64_t seed) {
  const KernelLattice fib = fibonacci_lattice(33);
  double norm_err = 0.0;
  for (std::size_t r = 1; r < fib.count(); ++r) {
    const auto p = fib.points.row(r);
    norm_err = std::max(norm_err, std::abs(std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) - 1.0));
  }
  const double fib_std = uniformity_stats(fib).angle_std;
  Rng rng = Rng(seed).stream(Stream::kCheck, 4);
  double mean = 0.0;
  for (int t = 0; t < 100; ++t) mean += uniformity_stats(random_lattice(33, rng)).angle_std;
  mean /= 100.0;
  return {"fibonacci_lattice_uniformity", norm_err <= 1e-12 && fib_std < mean,
          "angle_std " + fmt(fib_std) + " vs random mean " + fmt(mean)};
}

CheckResult check_knn_grid(std::size_t clouds, std::uint64_t seed) {
  Rng rng = Rng(seed).stream(Stream::kCheck, 5);
  std::size_t mismatches = 0;
  for (std::size_t t = 0; t < clouds; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.below(1000));
    const std::size_t k = 1 + static_cast<std::size_t>(rng.below(40));
    PointCloud cloud = random_ball(n, rng);
    if (t % 4 == 3) {
      // Snap to a coarse lattice so equal distances (and duplicates) occur.
      for (double& v : cloud.coords.data()) v = std::round(v * 4.0) / 4.0;
    }
    const double cell = rng.uniform(0.02, 0.6);
    mismatches += !(knn_grid(cloud, k, cell) == knn_bruteforce(cloud, k));
  }
  return {"knn_grid_equals_bruteforce", mismatches == 0,
          std::to_string(mismatches) + "/" + std::to_string(clouds) + " clouds differ"};
}

CheckResult check_reference_kernels(std::uint64_t seed) {
  Rng rng = Rng(seed).stream(Stream::kCheck, 6);
  const std::size_t n = 40, K = 6, L = 8, d = 5;
  const PointCloud cloud = random_ball(n, rng);
  bool ok = kernels::knn(cloud.coords, K) == kernels::ref::knn(cloud.coords, K);
  const NeighborIndex nbr = knn_bruteforce(cloud, K);
  const Matrix local = local_positions(cloud, nbr);
  const Matrix kernel = fibonacci_lattice(L).points;
  double worst = 0.0;
  for (Normalizer mode : {Normalizer::kSparsemax, Normalizer::kSoftmax, Normalizer::kRaw,
                          Normalizer::kOrderOneHot, Normalizer::kUniform}) {
    Matrix la, wa, lb, wb;
    kernels::permutation_forward(local, K, kernel, mode, la, wa);
    kernels::ref::permutation_forward(local, K, kernel, mode, lb, wb);
    worst = std::max({worst, max_abs_diff(la, lb), max_abs_diff(wa, wb)});
    Matrix dw(n * K, L);
    for (double& v : dw.data()) v = rng.normal();
    worst = std::max(worst, max_abs_diff(kernels::permutation_logit_grad(K, mode, wa, dw),
                                         kernels::ref::permutation_logit_grad(K, mode, wa, dw)));
  }
  Matrix X(n * K, d);
  for (double& v : X.data()) v = rng.normal();
  Matrix lg, M;
  kernels::permutation_forward(local, K, kernel, Normalizer::kSparsemax, lg, M);
  const Matrix Va = kernels::resample(X, M, K), Vb = kernels::ref::resample(X, M, K);
  worst = std::max(worst, max_abs_diff(Va, Vb));
  Matrix dV(n, L * d);
  for (double& v : dV.data()) v = rng.normal();
  Matrix dXa, dMa, dXb, dMb;
  kernels::resample_backward(X, M, K, dV, dXa, &dMa);
  kernels::ref::resample_backward(X, M, K, dV, dXb, &dMb);
  worst = std::max({worst, max_abs_diff(dXa, dXb), max_abs_diff(dMa, dMb)});
  Matrix A(7, 9), B(9, 4);
  for (double& v : A.data()) v = rng.normal();
  for (double& v : B.data()) v = rng.normal();
  worst = std::max(worst, max_abs_diff(kernels::matmul(A, B), kernels::ref::matmul(A, B)));
  worst = std::max(worst, max_abs_diff(kernels::matmul_tn(B, B), kernels::ref::matmul_tn(B, B)));
  ok = ok && worst <= 1e-12;
  return {"parallel_kernels_match_reference", ok, "max |omp - ref| = " + fmt(worst)};
}

CheckResult check_cosine_schedule() {
  TrainConfig c;
  c.epochs = 251;
  const double first = cosine_lr(0, c), last = cosine_lr(250, c), mid = cosine_lr(125, c);
  bool monotone = true;
  for (std::size_t e = 1; e < c.epochs; ++e) monotone = monotone && cosine_lr(e, c) <= cosine_lr(e - 1, c);
  const bool ok = first == 0.1 && last == 0.01 && std::abs(mid - 0.055) <= 1e-12 && monotone;
  return {"cosine_schedule", ok,
          "lr(0) = " + fmt(first) + ", lr(last) = " + fmt(last) + ", lr(mid) = " + fmt(mid)};
}

std::vector<CheckResult> run_all_checks(std::uint64_t seed) {
  return {
      check_sparsemax_oracle(1000, seed),
      check_sparsemax_jacobian(200, seed),
      check_column_stochastic(seed),
      check_permutation_invariance(20, seed),
      check_no_permutation_witness(20, seed),
      check_gradients(5, seed),
      check_lattice_quality(seed),
      check_knn_grid(40, seed),
      check_reference_kernels(seed),
      check_cosine_schedule(),
  };
}

}  // namespace paiconv

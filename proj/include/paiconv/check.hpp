#pragma once

// Self-verification suite: property and oracle checks that `paiconv check`
// runs against the built library.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "paiconv/netcls.hpp"

namespace paiconv {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Simplex projection by bisection on the threshold tau, solving
/// sum(max(z - tau, 0)) = 1. Shares no code with sparsemax().
std::vector<double> simplex_projection_bisection(std::span<const double> z);

struct InvarianceStats {
  std::size_t trials = 0;
  std::size_t violations = 0;  // trials whose logits moved by more than tol
  double max_diff = 0.0;
};

/// Builds a network of the given variant per trial, then compares logits of
/// a random cloud against the same cloud with shuffled point order and
/// shuffled neighbor slots 1..K-1.
InvarianceStats permutation_invariance_trials(Variant variant, std::size_t trials, std::size_t n,
                                              std::size_t K, std::size_t L, double tol,
                                              std::uint64_t seed);

struct GradCheckStats {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // activation pattern changed within +-h
  double max_rel_err = 0.0;
  std::string worst;        // name of the entry with max_rel_err
};

/// |a - n| / max(|a|, |n|, 1e-6).
double gradient_rel_err(double analytic, double numeric);

/// Network with 2 conv layers of width 4, K=3, L=4, 4-wide position code and
/// a 3-class head.
ClassifierConfig micro_config(Variant variant = Variant::kFull);

/// Central-difference check of cross-entropy gradients w.r.t. every trainable
/// scalar and every input coordinate of a random `n`-point cloud.
GradCheckStats network_grad_check(const ClassifierConfig& config, std::size_t n, double h,
                                  std::uint64_t seed);

CheckResult check_sparsemax_oracle(std::size_t vectors, std::uint64_t seed);
CheckResult check_sparsemax_jacobian(std::size_t vectors, std::uint64_t seed);
CheckResult check_column_stochastic(std::uint64_t seed);
CheckResult check_permutation_invariance(std::size_t trials, std::uint64_t seed);
CheckResult check_no_permutation_witness(std::size_t trials, std::uint64_t seed);
CheckResult check_gradients(std::size_t instances, std::uint64_t seed);
CheckResult check_lattice_quality(std::uint64_t seed);
CheckResult check_knn_grid(std::size_t clouds, std::uint64_t seed);
CheckResult check_reference_kernels(std::uint64_t seed);
CheckResult check_cosine_schedule();

/// Every check above at its default size.
std::vector<CheckResult> run_all_checks(std::uint64_t seed);

}  // namespace paiconv

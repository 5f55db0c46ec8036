#include "paiconv/param.hpp"

#include <atomic>
#include <cmath>

#include "paiconv/fault.hpp"

namespace paiconv {

Matrix fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

void accumulate(Matrix& dst, const Matrix& src) {
  if (dst.rows() != src.rows() || dst.cols() != src.cols())
    throw ContractError("accumulate: shape mismatch");
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
}

namespace {
std::atomic<Fault> g_fault{Fault::kNone};
}

void inject_fault(Fault f) { g_fault.store(f); }
Fault active_fault() { return g_fault.load(); }

}  // namespace paiconv

#pragma once

namespace paiconv {

/// Number of OpenMP threads used by the parallel kernels. Results do not
/// depend on this value: every parallel loop writes disjoint outputs and
/// reductions run sequentially in a fixed order.
void set_threads(int n);
int thread_count();

}  // namespace paiconv

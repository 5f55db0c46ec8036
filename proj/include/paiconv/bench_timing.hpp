#pragma once

#include <algorithm>
#include <chrono>
#include <vector>

#include "paiconv/numkit.hpp"

namespace paiconv {

template <typename Fn>
double median_time_ns(std::size_t repeats, Fn&& fn) {
  if (repeats < 5) throw ContractError("benchmarks need at least 5 repeats");
  using clock = std::chrono::steady_clock;
  fn();
  std::vector<double> samples;
  samples.reserve(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = clock::now();
    fn();
    const auto t1 = clock::now();
    samples.push_back(
        std::max(1.0, std::chrono::duration<double, std::nano>(t1 - t0).count()));
  }
  std::sort(samples.begin(), samples.end());
  const std::size_t mid = samples.size() / 2;
  return samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
}

}  // namespace paiconv

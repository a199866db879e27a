#ifndef BCRES_TESTS_TEST_UTIL_HPP_
#define BCRES_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "bcres/tensor.hpp"

namespace bcres::testing {

template <typename T>
TensorPtr<T> random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = -1.0,
                           double hi = 1.0, bool requires_grad = false) {
  auto t = make_tensor<T>(std::move(shape), requires_grad);
  for (auto& v : t->data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
TensorPtr<T> random_normal_tensor(std::vector<std::int64_t> shape, Rng& rng, double mean = 0.0,
                                  double stddev = 1.0, bool requires_grad = false) {
  auto t = make_tensor<T>(std::move(shape), requires_grad);
  for (auto& v : t->data) v = static_cast<T>(rng.normal(mean, stddev));
  return t;
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double worst = a.size() == b.size() ? 0.0 : 1e300;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

// Unique-ish scratch path under the build tree's working directory.
inline std::string scratch_path(const std::string& name) {
  static int counter = 0;
  return "bcres_test_scratch_" + std::to_string(counter++) + "_" + name;
}

}  // namespace bcres::testing

#endif  // BCRES_TESTS_TEST_UTIL_HPP_

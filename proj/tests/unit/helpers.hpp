#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "guap/tensor.hpp"

namespace testing {

template <typename T>
guap::Tensor<T> uniform(guap::Shape shape, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  guap::Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.span()) v = static_cast<T>(u(rng));
  return t;
}

// max_i |a_i - b_i| / max(1, max_i |b_i|)
inline double rel_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, scale = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return diff / std::max(1e-12, scale);
}

// Central differences of a scalar function of `x` (modified in place and restored).
inline guap::Tensor<double> numeric_gradient(guap::Tensor<double>& x, const std::function<double()>& f,
                                             double step = 1e-6) {
  guap::Tensor<double> g(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f();
    x[i] = keep - step;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("guap_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing

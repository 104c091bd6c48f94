#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "dpa/random.hpp"
#include "dpa/tensor.hpp"

namespace dpa::test {

template <typename Real = double>
Tensor<Real> random_tensor(int n, int c, int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Tensor<Real> t(n, c, h, w);
  Rng rng(seed);
  for (auto& v : t.storage()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over all entries.
template <typename Real>
double max_rel_error(const Tensor<Real>& analytic, Tensor<Real> point, const std::function<double(const Tensor<Real>&)>& f,
                     double h = 1e-6, double floor = 1e-8) {
  double worst = 0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const Real keep = point[i];
    point[i] = keep + static_cast<Real>(h);
    const double up = f(point);
    point[i] = keep - static_cast<Real>(h);
    const double dn = f(point);
    point[i] = keep;
    const double num = (up - dn) / (2 * h);
    const double a = static_cast<double>(analytic[i]);
    worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor}));
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dpa_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace dpa::test

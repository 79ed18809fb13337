#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "iln/iln.hpp"

namespace iln::testing {

/// Random depths in [lo, hi] meters.
inline RangeImage random_image(Rng& rng, std::size_t rows, std::size_t cols, double lo = 1.0, double hi = 80.0,
                               const SensorSpec& spec = {}) {
  std::vector<float> d(rows * cols);
  for (auto& x : d) x = static_cast<float>(rng.uniform(lo, hi));
  return {spec, rows, cols, std::move(d)};
}

inline RangeImage constant_image(std::size_t rows, std::size_t cols, float depth, const SensorSpec& spec = {}) {
  return {spec, rows, cols, std::vector<float>(rows * cols, depth)};
}

/// Query with v in [v_min, v_max] and h in [h_min, h_max).
inline LaserQuery random_query(Rng& rng, const SensorSpec& spec = {}) {
  return {rng.uniform(spec.v_min, spec.v_max), rng.uniform(spec.h_min, spec.h_max)};
}

inline ad::Tensor<double> random_tensor(Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  ad::Tensor<double> t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("iln_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace iln::testing

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iln/errors.hpp"

/**
 * \file
 * \brief Range-image data model: pixel/angle conventions, neighbor lookup and
 * spherical to Cartesian conversion.
 *
 * Conventions used throughout the library:
 * - row 0 is the row with the highest vertical angle (image-like, top-down);
 * - the horizontal angle grows counterclockwise from +x towards +y;
 * - a pixel stores the depth measured at its center direction.
 */

namespace iln {

inline constexpr double kDegToRad = std::numbers::pi / 180.0;

/// Angular extents and maximum range of a LiDAR. Angles in degrees, range in meters.
struct SensorSpec {
  double v_min = -15.0;
  double v_max = 15.0;
  double h_min = -180.0;
  double h_max = 180.0;
  double r_max = 80.0;

  void validate() const {
    if (!(v_min < v_max) || !(h_min < h_max) || !(r_max > 0.0) || h_max - h_min > 360.0) {
      throw ConfigError("invalid sensor spec: need v_min < v_max, h_min < h_max, 0 < r_max, h sweep <= 360");
    }
  }

  [[nodiscard]] bool full_sweep() const noexcept { return h_max - h_min == 360.0; }

  friend bool operator==(const SensorSpec&, const SensorSpec&) = default;
};

/// Grid dimensions, written "HxW".
struct Resolution {
  std::size_t rows = 0;
  std::size_t cols = 0;

  [[nodiscard]] std::size_t pixels() const noexcept { return rows * cols; }
  [[nodiscard]] std::string str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

  static Resolution parse(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos) throw ConfigError("resolution '" + text + "' is not of the form HxW");
    try {
      std::size_t used_rows = 0;
      std::size_t used_cols = 0;
      const long rows = std::stol(text.substr(0, x), &used_rows);
      const long cols = std::stol(text.substr(x + 1), &used_cols);
      if (used_rows != x || used_cols != text.size() - x - 1 || rows <= 0 || cols <= 0) throw ConfigError("");
      return {static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
    } catch (const std::exception&) {
      throw ConfigError("resolution '" + text + "' must be two positive integers HxW");
    }
  }

  friend auto operator<=>(const Resolution&, const Resolution&) = default;
};

/// Continuous laser direction in degrees.
struct LaserQuery {
  double v = 0.0;
  double h = 0.0;

  friend bool operator==(const LaserQuery&, const LaserQuery&) = default;
};

/// One of the four pixels surrounding a query.
/**
 * `dq_v`, `dq_h` are (query - pixel center) in units of pixel pitch, measured
 * to the unclamped (virtual) neighbor center so that they always lie in
 * [-1, 1]; a magnitude of exactly 1 only occurs for a neighbor with zero
 * bilinear weight.
 */
struct NeighborRef {
  std::size_t row = 0;
  std::size_t col = 0;
  double depth = 0.0;
  double dq_v = 0.0;
  double dq_h = 0.0;

  friend bool operator==(const NeighborRef&, const NeighborRef&) = default;
};

/// Neighbors in the order top-left, top-right, bottom-left, bottom-right.
using Neighborhood = std::array<NeighborRef, 4>;

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Point3&, const Point3&) = default;
};

using PointCloud = std::vector<Point3>;

/// H x W grid of depths (meters, row-major, row 0 at v_max).
class RangeImage {
 public:
  RangeImage() = default;

  RangeImage(SensorSpec spec, std::size_t rows, std::size_t cols, std::vector<float> depths)
      : spec_(spec), rows_(rows), cols_(cols), depths_(std::move(depths)) {
    spec_.validate();
    if (rows_ == 0 || cols_ == 0) throw ShapeError("range image dimensions must be positive");
    if (depths_.size() != rows_ * cols_) {
      throw ShapeError("range image " + std::to_string(rows_) + "x" + std::to_string(cols_) + " needs " +
                       std::to_string(rows_ * cols_) + " depths, got " + std::to_string(depths_.size()));
    }
    for (std::size_t i = 0; i < depths_.size(); ++i) {
      const double d = depths_[i];
      if (!(d > 0.0) || d > spec_.r_max) {
        throw DomainError("depth " + std::to_string(d) + " at pixel " + std::to_string(i) + " outside (0, r_max]");
      }
    }
  }

  [[nodiscard]] const SensorSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] Resolution resolution() const noexcept { return {rows_, cols_}; }
  [[nodiscard]] std::span<const float> depths() const noexcept { return depths_; }

  [[nodiscard]] float at(std::size_t row, std::size_t col) const {
    if (row >= rows_ || col >= cols_) throw IndexError("pixel index out of range");
    return depths_[row * cols_ + col];
  }

  friend bool operator==(const RangeImage&, const RangeImage&) = default;

 private:
  SensorSpec spec_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> depths_;
};

[[nodiscard]] inline double vertical_pitch(const SensorSpec& spec, std::size_t rows) {
  return (spec.v_max - spec.v_min) / static_cast<double>(rows);
}

[[nodiscard]] inline double horizontal_pitch(const SensorSpec& spec, std::size_t cols) {
  return (spec.h_max - spec.h_min) / static_cast<double>(cols);
}

[[nodiscard]] inline LaserQuery pixel_center(const SensorSpec& spec, std::size_t rows, std::size_t cols,
                                             std::size_t row, std::size_t col) {
  if (row >= rows || col >= cols) {
    throw IndexError("pixel (" + std::to_string(row) + ", " + std::to_string(col) + ") outside " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  return {spec.v_max - (static_cast<double>(row) + 0.5) * vertical_pitch(spec, rows),
          spec.h_min + (static_cast<double>(col) + 0.5) * horizontal_pitch(spec, cols)};
}

/// Pixel-center queries of an H x W grid, row-major.
[[nodiscard]] inline std::vector<LaserQuery> query_grid(const SensorSpec& spec, std::size_t rows, std::size_t cols) {
  std::vector<LaserQuery> out;
  out.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.push_back(pixel_center(spec, rows, cols, r, c));
  }
  return out;
}

/// Maps h into [h_min, h_max) on a full sweep; otherwise checks it is in range.
[[nodiscard]] inline double canonical_horizontal(const SensorSpec& spec, double h) {
  if (!std::isfinite(h)) throw DomainError("non-finite horizontal angle");
  if (spec.full_sweep()) {
    double x = std::fmod(h - spec.h_min, 360.0);
    if (x < 0.0) x += 360.0;
    return spec.h_min + x;
  }
  if (h < spec.h_min || h >= spec.h_max) {
    throw DomainError("horizontal angle " + std::to_string(h) + " outside [" + std::to_string(spec.h_min) + ", " +
                      std::to_string(spec.h_max) + ")");
  }
  return h;
}

/// The 4 pixel centers bracketing q. Columns wrap on a 360 degree sweep,
/// rows (and columns of a partial sweep) clamp to the image border.
[[nodiscard]] inline Neighborhood neighbors_of(const RangeImage& img, const LaserQuery& q) {
  const SensorSpec& spec = img.spec();
  if (!std::isfinite(q.v) || q.v < spec.v_min || q.v > spec.v_max) {
    throw DomainError("vertical angle " + std::to_string(q.v) + " outside [" + std::to_string(spec.v_min) + ", " +
                      std::to_string(spec.v_max) + "]");
  }
  const double h = canonical_horizontal(spec, q.h);
  const auto rows = static_cast<long>(img.rows());
  const auto cols = static_cast<long>(img.cols());

  // continuous pixel coordinates, integer values at pixel centers; values a
  // rounding error away from a center snap onto it
  const auto snap = [](double c) {
    const double r = std::round(c);
    return std::abs(c - r) < 1e-9 ? r : c;
  };
  const double y = snap((spec.v_max - q.v) / vertical_pitch(spec, img.rows()) - 0.5);
  const double x = snap((h - spec.h_min) / horizontal_pitch(spec, img.cols()) - 0.5);
  const long y0 = static_cast<long>(std::floor(y));
  const long x0 = static_cast<long>(std::floor(x));

  const auto clamp_row = [&](long r) { return static_cast<std::size_t>(std::clamp(r, 0L, rows - 1)); };
  const auto fold_col = [&](long c) {
    if (spec.full_sweep()) return static_cast<std::size_t>(((c % cols) + cols) % cols);
    return static_cast<std::size_t>(std::clamp(c, 0L, cols - 1));
  };

  Neighborhood out;
  std::size_t t = 0;
  for (long dy = 0; dy <= 1; ++dy) {
    for (long dx = 0; dx <= 1; ++dx) {
      const long ry = y0 + dy;
      const long rx = x0 + dx;
      NeighborRef& n = out[t++];
      n.row = clamp_row(ry);
      n.col = fold_col(rx);
      n.depth = img.at(n.row, n.col);
      // v grows upward while rows grow downward
      n.dq_v = static_cast<double>(ry) - y;
      n.dq_h = x - static_cast<double>(rx);
    }
  }
  return out;
}

/// Bilinear area weights: (1 - |dq_v|)(1 - |dq_h|) per neighbor.
[[nodiscard]] inline std::array<double, 4> bilinear_weights(const Neighborhood& n) {
  std::array<double, 4> w{};
  for (std::size_t t = 0; t < 4; ++t) w[t] = (1.0 - std::abs(n[t].dq_v)) * (1.0 - std::abs(n[t].dq_h));
  return w;
}

[[nodiscard]] inline Point3 to_point(const LaserQuery& q, double range) {
  const double v = q.v * kDegToRad;
  const double h = q.h * kDegToRad;
  return {range * std::cos(v) * std::cos(h), range * std::cos(v) * std::sin(h), range * std::sin(v)};
}

/// Inverse of to_point: (v, h) in degrees and the range.
[[nodiscard]] inline std::pair<LaserQuery, double> to_spherical(const Point3& p) {
  const double r = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
  const double v = std::atan2(p.z, std::hypot(p.x, p.y));
  const double h = std::atan2(p.y, p.x);
  return {{v / kDegToRad, h / kDegToRad}, r};
}

/// One point per pixel, in the sensor frame.
[[nodiscard]] inline PointCloud to_points(const RangeImage& img) {
  PointCloud out;
  out.reserve(img.rows() * img.cols());
  for (std::size_t r = 0; r < img.rows(); ++r) {
    for (std::size_t c = 0; c < img.cols(); ++c) {
      out.push_back(to_point(pixel_center(img.spec(), img.rows(), img.cols(), r, c), img.at(r, c)));
    }
  }
  return out;
}

}  // namespace iln

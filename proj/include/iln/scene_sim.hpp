#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "iln/errors.hpp"
#include "iln/parallel.hpp"
#include "iln/range_core.hpp"
#include "iln/rng.hpp"

/**
 * \file
 * \brief Procedural scenes of analytic primitives and exact ray casting.
 *
 * A scene answers the depth at any continuous laser direction, which gives
 * ground truth at arbitrary resolution.
 */

namespace iln {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

[[nodiscard]] inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

struct Plane {
  Vec3 point;
  Vec3 normal;  ///< unit length
  friend bool operator==(const Plane&, const Plane&) = default;
};

struct Sphere {
  Vec3 center;
  double radius = 1.0;
  friend bool operator==(const Sphere&, const Sphere&) = default;
};

struct AxisAlignedBox {
  Vec3 lo;
  Vec3 hi;
  friend bool operator==(const AxisAlignedBox&, const AxisAlignedBox&) = default;
};

/// Capped cylinder whose axis is parallel to z.
struct VerticalCylinder {
  Vec3 center;  ///< midpoint of the axis
  double radius = 1.0;
  double half_height = 1.0;
  friend bool operator==(const VerticalCylinder&, const VerticalCylinder&) = default;
};

using Primitive = std::variant<Plane, Sphere, AxisAlignedBox, VerticalCylinder>;

namespace detail {

inline constexpr double kHitEpsilon = 1e-9;

inline std::optional<double> nearest_positive(double t0, double t1) {
  if (t0 > t1) std::swap(t0, t1);
  if (t0 > kHitEpsilon) return t0;
  if (t1 > kHitEpsilon) return t1;
  return std::nullopt;
}

inline std::optional<double> intersect(const Plane& p, Vec3 dir) {
  const double denom = dot(dir, p.normal);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const double t = dot(p.point, p.normal) / denom;
  if (t > kHitEpsilon) return t;
  return std::nullopt;
}

inline std::optional<double> intersect(const Sphere& s, Vec3 dir) {
  // |t d - c|^2 = R^2 with |d| = 1
  const double b = dot(dir, s.center);
  const double c = dot(s.center, s.center) - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  return nearest_positive(b - root, b + root);
}

inline std::optional<double> intersect(const AxisAlignedBox& box, Vec3 dir) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  const double d[3] = {dir.x, dir.y, dir.z};
  const double lo[3] = {box.lo.x, box.lo.y, box.lo.z};
  const double hi[3] = {box.hi.x, box.hi.y, box.hi.z};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (0.0 < lo[a] || 0.0 > hi[a]) return std::nullopt;
      continue;
    }
    double t0 = lo[a] / d[a];
    double t1 = hi[a] / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::nullopt;
  }
  return nearest_positive(t_near, t_far);
}

inline std::optional<double> intersect(const VerticalCylinder& cyl, Vec3 dir) {
  std::optional<double> best;
  const auto keep = [&](double t) {
    if (t > kHitEpsilon && (!best || t < *best)) best = t;
  };
  const double z_lo = cyl.center.z - cyl.half_height;
  const double z_hi = cyl.center.z + cyl.half_height;

  // lateral surface: |t (dx, dy) - (cx, cy)| = R
  const double a = dir.x * dir.x + dir.y * dir.y;
  if (a > 1e-15) {
    const double b = dir.x * cyl.center.x + dir.y * cyl.center.y;
    const double c = cyl.center.x * cyl.center.x + cyl.center.y * cyl.center.y - cyl.radius * cyl.radius;
    const double disc = b * b - a * c;
    if (disc >= 0.0) {
      const double root = std::sqrt(disc);
      for (const double t : {(b - root) / a, (b + root) / a}) {
        const double z = t * dir.z;
        if (z >= z_lo && z <= z_hi) keep(t);
      }
    }
  }
  // caps
  if (std::abs(dir.z) > 1e-15) {
    for (const double zc : {z_lo, z_hi}) {
      const double t = zc / dir.z;
      const double px = t * dir.x - cyl.center.x;
      const double py = t * dir.y - cyl.center.y;
      if (px * px + py * py <= cyl.radius * cyl.radius) keep(t);
    }
  }
  return best;
}

}  // namespace detail

/// Smallest positive ray parameter of a unit ray from the origin, if any.
[[nodiscard]] inline std::optional<double> intersect(const Primitive& prim, Vec3 dir) {
  return std::visit([&](const auto& p) { return detail::intersect(p, dir); }, prim);
}

/// Bounds of the procedural generator. Lengths in meters.
struct SceneParams {
  std::size_t num_objects = 20;
  double sensor_height = 1.8;
  double placement_min = 4.0;   ///< min horizontal distance of an object center
  double placement_max = 40.0;  ///< max horizontal distance of an object center
  double box_side_min = 1.5;
  double box_side_max = 10.0;
  double box_height_min = 1.0;
  double box_height_max = 8.0;
  double sphere_radius_min = 0.5;
  double sphere_radius_max = 2.5;
  double cylinder_radius_min = 0.15;
  double cylinder_radius_max = 1.0;
  double cylinder_height_min = 2.0;
  double cylinder_height_max = 8.0;

  void validate() const {
    const auto range = [](double lo, double hi, const char* name) {
      if (!(lo > 0.0) || !(lo <= hi) || !std::isfinite(hi)) {
        throw ConfigError(std::string("scene param range ") + name + " is empty or non-positive");
      }
    };
    if (!(sensor_height > 0.0)) throw ConfigError("sensor_height must be positive");
    range(placement_min, placement_max, "placement");
    range(box_side_min, box_side_max, "box_side");
    range(box_height_min, box_height_max, "box_height");
    range(sphere_radius_min, sphere_radius_max, "sphere_radius");
    range(cylinder_radius_min, cylinder_radius_max, "cylinder_radius");
    range(cylinder_height_min, cylinder_height_max, "cylinder_height");
  }

  friend bool operator==(const SceneParams&, const SceneParams&) = default;
};

struct Scene {
  std::uint64_t seed = 0;
  double sensor_height = 1.8;
  std::vector<Primitive> primitives;  ///< primitives[0] is the ground plane

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Horizontal center of a non-ground primitive.
[[nodiscard]] inline Vec3 primitive_center(const Primitive& prim) {
  struct Visitor {
    Vec3 operator()(const Plane& p) const { return p.point; }
    Vec3 operator()(const Sphere& s) const { return s.center; }
    Vec3 operator()(const AxisAlignedBox& b) const { return 0.5 * (b.lo + b.hi); }
    Vec3 operator()(const VerticalCylinder& c) const { return c.center; }
  };
  return std::visit(Visitor{}, prim);
}

[[nodiscard]] inline bool encloses_origin(const Primitive& prim) {
  struct Visitor {
    bool operator()(const Plane&) const { return false; }
    bool operator()(const Sphere& s) const { return dot(s.center, s.center) <= s.radius * s.radius; }
    bool operator()(const AxisAlignedBox& b) const {
      return b.lo.x <= 0 && b.hi.x >= 0 && b.lo.y <= 0 && b.hi.y >= 0 && b.lo.z <= 0 && b.hi.z >= 0;
    }
    bool operator()(const VerticalCylinder& c) const {
      return c.center.x * c.center.x + c.center.y * c.center.y <= c.radius * c.radius &&
             std::abs(c.center.z) <= c.half_height;
    }
  };
  return std::visit(Visitor{}, prim);
}

/// Deterministic scene for a seed: a ground plane at z = -sensor_height plus
/// `num_objects` boxes, spheres and vertical cylinders resting on it.
[[nodiscard]] inline Scene gen_scene(std::uint64_t seed, const SceneParams& params = {}) {
  params.validate();
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;
  scene.sensor_height = params.sensor_height;
  const double ground = -params.sensor_height;
  scene.primitives.push_back(Plane{{0.0, 0.0, ground}, {0.0, 0.0, 1.0}});

  while (scene.primitives.size() < params.num_objects + 1) {
    const double dist = rng.uniform(params.placement_min, params.placement_max);
    const double azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double cx = dist * std::cos(azimuth);
    const double cy = dist * std::sin(azimuth);
    const double kind = rng.uniform();
    Primitive prim;
    if (kind < 0.4) {
      const double sx = rng.uniform(params.box_side_min, params.box_side_max);
      const double sy = rng.uniform(params.box_side_min, params.box_side_max);
      const double sz = rng.uniform(params.box_height_min, params.box_height_max);
      prim = AxisAlignedBox{{cx - 0.5 * sx, cy - 0.5 * sy, ground}, {cx + 0.5 * sx, cy + 0.5 * sy, ground + sz}};
    } else if (kind < 0.7) {
      const double r = rng.uniform(params.sphere_radius_min, params.sphere_radius_max);
      prim = Sphere{{cx, cy, ground + r}, r};
    } else {
      const double r = rng.uniform(params.cylinder_radius_min, params.cylinder_radius_max);
      const double hh = 0.5 * rng.uniform(params.cylinder_height_min, params.cylinder_height_max);
      prim = VerticalCylinder{{cx, cy, ground + hh}, r, hh};
    }
    // the sensor must stay outside every object
    if (encloses_origin(prim)) continue;
    scene.primitives.push_back(prim);
  }
  return scene;
}

[[nodiscard]] inline Vec3 ray_direction(const LaserQuery& q) {
  const double v = q.v * kDegToRad;
  const double h = q.h * kDegToRad;
  return {std::cos(v) * std::cos(h), std::cos(v) * std::sin(h), std::sin(v)};
}

/// Depth of the nearest surface along q, or r_max when nothing is hit closer.
[[nodiscard]] inline double raycast(const Scene& scene, const LaserQuery& q, const SensorSpec& spec) {
  const Vec3 dir = ray_direction(q);
  double best = spec.r_max;
  for (const auto& prim : scene.primitives) {
    if (const auto t = intersect(prim, dir); t && *t < best) best = *t;
  }
  return best;
}

/// Renders the scene at the pixel centers of an H x W grid. Rows are rendered
/// in parallel; each depth depends only on its own ray.
[[nodiscard]] inline RangeImage render_range_image(const Scene& scene, const SensorSpec& spec, std::size_t rows,
                                                   std::size_t cols, std::size_t workers = 1) {
  spec.validate();
  if (rows == 0 || cols == 0) throw ShapeError("render resolution must be positive");
  std::vector<float> depths(rows * cols);
  parallel_for(
      rows,
      [&](std::size_t r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = raycast(scene, pixel_center(spec, rows, cols, r, c), spec);
          // float rounding must not leave (0, r_max]
          depths[r * cols + c] = std::min(static_cast<float>(d), static_cast<float>(spec.r_max));
        }
      },
      workers);
  return {spec, rows, cols, std::move(depths)};
}

}  // namespace iln

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "iln/dataset.hpp"
#include "iln/errors.hpp"
#include "iln/parallel.hpp"
#include "iln/range_core.hpp"

/**
 * \file
 * \brief Range-image MAE and voxelized point-cloud IoU / precision / recall / F1.
 */

namespace iln {

inline constexpr double kVoxelSize = 0.1;

using Voxel = std::array<std::int64_t, 3>;

/// Sorted, duplicate-free voxel coordinates.
using VoxelSet = std::vector<Voxel>;

/// Half-open cells: a point maps to floor(p / cell) per axis.
[[nodiscard]] inline VoxelSet voxelize(const PointCloud& points, double cell = kVoxelSize) {
  VoxelSet out;
  out.reserve(points.size());
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) throw DomainError("non-finite point");
    out.push_back({static_cast<std::int64_t>(std::floor(p.x / cell)), static_cast<std::int64_t>(std::floor(p.y / cell)),
                   static_cast<std::int64_t>(std::floor(p.z / cell))});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct VoxelScores {
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Both sets empty scores 1 everywhere; a ratio with an empty denominator scores 0.
[[nodiscard]] inline VoxelScores voxel_metrics(const VoxelSet& pred, const VoxelSet& gt) {
  if (pred.empty() && gt.empty()) return {1.0, 1.0, 1.0, 1.0};
  std::size_t common = 0;
  auto a = pred.begin();
  auto b = gt.begin();
  while (a != pred.end() && b != gt.end()) {
    if (*a < *b) {
      ++a;
    } else if (*b < *a) {
      ++b;
    } else {
      ++common;
      ++a;
      ++b;
    }
  }
  const double inter = static_cast<double>(common);
  const double uni = static_cast<double>(pred.size() + gt.size() - common);
  VoxelScores s;
  s.iou = inter / uni;
  s.precision = pred.empty() ? 0.0 : inter / static_cast<double>(pred.size());
  s.recall = gt.empty() ? 0.0 : inter / static_cast<double>(gt.size());
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

/// Mean absolute depth error in meters.
[[nodiscard]] inline double mae(const RangeImage& pred, const RangeImage& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw ShapeError("mae: " + pred.resolution().str() + " vs " + gt.resolution().str());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < gt.depths().size(); ++i) {
    total += std::abs(static_cast<double>(pred.depths()[i]) - static_cast<double>(gt.depths()[i]));
  }
  return total / static_cast<double>(gt.depths().size());
}

/// Range image from raw predictions. Values are clipped to the sensor's
/// measurable interval; non-finite values are an error.
[[nodiscard]] inline RangeImage prediction_image(const SensorSpec& spec, Resolution res, std::span<const double> values) {
  constexpr double kMinDepth = 1e-3;
  std::vector<float> depths(values.size());
  const auto r_max = static_cast<float>(spec.r_max);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw DomainError("non-finite prediction at pixel " + std::to_string(i));
    depths[i] = std::min(static_cast<float>(std::clamp(values[i], kMinDepth, spec.r_max)), r_max);
  }
  return {spec, res.rows, res.cols, std::move(depths)};
}

struct EvalReport {
  std::string method;
  Resolution resolution;
  double mae = 0.0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline constexpr const char* kEvalCsvHeader = "method,resolution,mae,iou,precision,recall,f1";

[[nodiscard]] inline std::string to_csv_row(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f", r.method.c_str(), r.resolution.str().c_str(), r.mae,
                r.iou, r.precision, r.recall, r.f1);
  return buf;
}

/// Predicts depths for queries into an input image.
using Predictor = std::function<std::vector<double>(const RangeImage& input, std::span<const LaserQuery> queries)>;

[[nodiscard]] inline Predictor bilinear_predictor() {
  return [](const RangeImage& input, std::span<const LaserQuery> queries) {
    std::vector<double> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
      const Neighborhood n = neighbors_of(input, q);
      const auto w = bilinear_weights(n);
      out.push_back(w[0] * n[0].depth + w[1] * n[1].depth + w[2] * n[2].depth + w[3] * n[3].depth);
    }
    return out;
  };
}

/// Per-scene metrics of one frame.
[[nodiscard]] inline EvalReport evaluate_frame(const Predictor& predictor, const Frame& frame, Resolution input_res,
                                               Resolution test_res) {
  const RangeImage& input = frame.at(input_res);
  const RangeImage& gt = frame.at(test_res);
  const auto queries = query_grid(gt.spec(), test_res.rows, test_res.cols);
  const auto values = predictor(input, queries);
  if (values.size() != queries.size()) throw ShapeError("predictor returned the wrong number of depths");
  const RangeImage pred = prediction_image(gt.spec(), test_res, values);
  const VoxelScores s = voxel_metrics(voxelize(to_points(pred)), voxelize(to_points(gt)));
  return {"", test_res, mae(pred, gt), s.iou, s.precision, s.recall, s.f1};
}

/// Macro average over frames: metrics per scene, then the mean over scenes.
/// F1 is the harmonic mean of the averaged precision and recall.
[[nodiscard]] inline EvalReport evaluate(const Predictor& predictor, std::span<const Frame> frames,
                                         Resolution input_res, Resolution test_res, std::string method,
                                         std::size_t workers = 1) {
  if (frames.empty()) throw DatasetError("no frames to evaluate");
  std::vector<EvalReport> per_scene(frames.size());
  parallel_for(
      frames.size(), [&](std::size_t i) { per_scene[i] = evaluate_frame(predictor, frames[i], input_res, test_res); },
      workers);
  EvalReport out{std::move(method), test_res};
  for (const auto& r : per_scene) {
    out.mae += r.mae;
    out.iou += r.iou;
    out.precision += r.precision;
    out.recall += r.recall;
  }
  const double n = static_cast<double>(frames.size());
  out.mae /= n;
  out.iou /= n;
  out.precision /= n;
  out.recall /= n;
  // F1 of the averaged precision and recall keeps the report self-consistent
  const double pr = out.precision + out.recall;
  out.f1 = pr > 0.0 ? 2.0 * out.precision * out.recall / pr : 0.0;
  return out;
}

}  // namespace iln

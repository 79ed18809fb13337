#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "iln/errors.hpp"
#include "iln/io.hpp"
#include "iln/parallel.hpp"
#include "iln/range_core.hpp"
#include "iln/scene_sim.hpp"

/**
 * \file
 * \brief Multi-resolution renders of procedural scenes, split by disjoint seeds.
 *
 * On disk a dataset directory holds `train.manifest`, `test.manifest` and one
 * range-image file per (scene, resolution) under `train/` and `test/`.
 */

namespace iln {

enum class Split { train, test };

[[nodiscard]] inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct DatasetManifest {
  Split split = Split::train;
  std::vector<std::uint64_t> seeds;
  SensorSpec spec;
  std::vector<Resolution> resolutions;
  SceneParams scene;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

[[nodiscard]] inline std::string encode_manifest(const DatasetManifest& m) {
  KeyValues kv;
  kv["format"] = "iln-manifest";
  kv["version"] = "1";
  kv["split"] = to_string(m.split);
  std::string seeds;
  for (std::size_t i = 0; i < m.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(m.seeds[i]);
  kv["seeds"] = seeds;
  std::string res;
  for (std::size_t i = 0; i < m.resolutions.size(); ++i) res += (i ? "," : "") + m.resolutions[i].str();
  kv["resolutions"] = res;
  kv["v_min"] = format_double(m.spec.v_min);
  kv["v_max"] = format_double(m.spec.v_max);
  kv["h_min"] = format_double(m.spec.h_min);
  kv["h_max"] = format_double(m.spec.h_max);
  kv["r_max"] = format_double(m.spec.r_max);
  const SceneParams& p = m.scene;
  kv["scene.num_objects"] = std::to_string(p.num_objects);
  kv["scene.sensor_height"] = format_double(p.sensor_height);
  kv["scene.placement"] = format_double(p.placement_min) + "," + format_double(p.placement_max);
  kv["scene.box_side"] = format_double(p.box_side_min) + "," + format_double(p.box_side_max);
  kv["scene.box_height"] = format_double(p.box_height_min) + "," + format_double(p.box_height_max);
  kv["scene.sphere_radius"] = format_double(p.sphere_radius_min) + "," + format_double(p.sphere_radius_max);
  kv["scene.cylinder_radius"] = format_double(p.cylinder_radius_min) + "," + format_double(p.cylinder_radius_max);
  kv["scene.cylinder_height"] = format_double(p.cylinder_height_min) + "," + format_double(p.cylinder_height_max);
  return format_key_values(kv);
}

[[nodiscard]] inline DatasetManifest decode_manifest(const KeyValues& kv, const std::string& origin) {
  const auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(origin + ": manifest is missing key '" + key + "'", 0);
    return it->second;
  };
  if (get("format") != "iln-manifest") throw FormatError(origin + ": not an iln manifest", 0);
  if (get("version") != "1") throw FormatError(origin + ": unsupported manifest version " + get("version"), 0);
  DatasetManifest m;
  const std::string& split = get("split");
  if (split == "train") {
    m.split = Split::train;
  } else if (split == "test") {
    m.split = Split::test;
  } else {
    throw FormatError(origin + ": unknown split '" + split + "'", 0);
  }
  try {
    for (const auto& s : iln::split(get("seeds"), ',')) m.seeds.push_back(parse_uint("seeds", s));
    for (const auto& r : iln::split(get("resolutions"), ',')) m.resolutions.push_back(Resolution::parse(r));
    m.spec.v_min = parse_double("v_min", get("v_min"));
    m.spec.v_max = parse_double("v_max", get("v_max"));
    m.spec.h_min = parse_double("h_min", get("h_min"));
    m.spec.h_max = parse_double("h_max", get("h_max"));
    m.spec.r_max = parse_double("r_max", get("r_max"));
    m.spec.validate();
    const auto pair = [&](const std::string& key, double& lo, double& hi) {
      const auto parts = iln::split(get(key), ',');
      if (parts.size() != 2) throw ConfigError(key + " needs two comma-separated values");
      lo = parse_double(key, parts[0]);
      hi = parse_double(key, parts[1]);
    };
    SceneParams& p = m.scene;
    p.num_objects = parse_uint("scene.num_objects", get("scene.num_objects"));
    p.sensor_height = parse_double("scene.sensor_height", get("scene.sensor_height"));
    pair("scene.placement", p.placement_min, p.placement_max);
    pair("scene.box_side", p.box_side_min, p.box_side_max);
    pair("scene.box_height", p.box_height_min, p.box_height_max);
    pair("scene.sphere_radius", p.sphere_radius_min, p.sphere_radius_max);
    pair("scene.cylinder_radius", p.cylinder_radius_min, p.cylinder_radius_max);
    pair("scene.cylinder_height", p.cylinder_height_min, p.cylinder_height_max);
    p.validate();
  } catch (const ConfigError& e) {
    throw FormatError(origin + ": " + e.what(), 0);
  }
  return m;
}

[[nodiscard]] inline std::filesystem::path manifest_path(const std::filesystem::path& dir, Split split) {
  return dir / (to_string(split) + ".manifest");
}

[[nodiscard]] inline std::filesystem::path image_path(const std::filesystem::path& dir, Split split,
                                                      std::uint64_t seed, Resolution res) {
  return dir / to_string(split) / ("scene_" + std::to_string(seed) + "_" + res.str() + ".ilnr");
}

/// One scene rendered at several resolutions.
struct Frame {
  std::uint64_t seed = 0;
  std::map<Resolution, RangeImage> images;

  [[nodiscard]] const RangeImage& at(Resolution res) const {
    const auto it = images.find(res);
    if (it == images.end()) {
      throw DatasetError("scene " + std::to_string(seed) + " has no render at " + res.str());
    }
    return it->second;
  }
};

struct Dataset {
  SensorSpec spec;
  std::vector<Frame> train;
  std::vector<Frame> test;

  [[nodiscard]] const std::vector<Frame>& frames(Split s) const { return s == Split::train ? train : test; }
};

/// Train and test manifests over consecutive seeds first_seed, first_seed + 1, ...;
/// the last `test_scenes` seeds form the test split.
[[nodiscard]] inline std::pair<DatasetManifest, DatasetManifest> make_split_manifests(
    std::uint64_t first_seed, std::size_t scenes, std::size_t test_scenes, const SensorSpec& spec,
    std::vector<Resolution> resolutions, const SceneParams& params = {}) {
  if (scenes == 0) throw ConfigError("a dataset needs at least one scene");
  if (test_scenes >= scenes && scenes > 1) throw ConfigError("test split must leave at least one train scene");
  if (resolutions.empty()) throw ConfigError("a dataset needs at least one resolution");
  spec.validate();
  params.validate();
  DatasetManifest train{Split::train, {}, spec, resolutions, params};
  DatasetManifest test{Split::test, {}, spec, std::move(resolutions), params};
  for (std::size_t i = 0; i < scenes; ++i) {
    (i + test_scenes < scenes ? train : test).seeds.push_back(first_seed + i);
  }
  return {train, test};
}

/// Renders every (seed, resolution) of a manifest in memory.
[[nodiscard]] inline std::vector<Frame> render_frames(const DatasetManifest& m, std::size_t workers = worker_count()) {
  std::vector<Frame> frames(m.seeds.size());
  parallel_for(
      m.seeds.size(),
      [&](std::size_t i) {
        const Scene scene = gen_scene(m.seeds[i], m.scene);
        frames[i].seed = m.seeds[i];
        for (const Resolution res : m.resolutions) {
          frames[i].images.emplace(res, render_range_image(scene, m.spec, res.rows, res.cols));
        }
      },
      workers);
  return frames;
}

inline void check_disjoint(const DatasetManifest& train, const DatasetManifest& test) {
  const std::set<std::uint64_t> train_seeds(train.seeds.begin(), train.seeds.end());
  for (const auto s : test.seeds) {
    if (train_seeds.contains(s)) throw DatasetError("seed " + std::to_string(s) + " is in both train and test splits");
  }
}

[[nodiscard]] inline Dataset build_dataset(const DatasetManifest& train, const DatasetManifest& test,
                                           std::size_t workers = worker_count()) {
  check_disjoint(train, test);
  if (!(train.spec == test.spec)) throw DatasetError("train and test manifests disagree on the sensor spec");
  return {train.spec, render_frames(train, workers), render_frames(test, workers)};
}

/// Writes the manifest and all its renders under `dir`.
inline void write_dataset(const DatasetManifest& m, const std::filesystem::path& dir,
                          std::size_t workers = worker_count()) {
  std::error_code ec;
  std::filesystem::create_directories(dir / to_string(m.split), ec);
  if (ec) throw IoError("cannot create '" + (dir / to_string(m.split)).string() + "': " + ec.message());
  const auto frames = render_frames(m, workers);
  for (const auto& frame : frames) {
    for (const auto& [res, img] : frame.images) write_range_image(image_path(dir, m.split, frame.seed, res), img);
  }
  write_text_file(manifest_path(dir, m.split), encode_manifest(m));
}

[[nodiscard]] inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  return decode_manifest(read_key_values(path), path.string());
}

/// Loads both splits of a dataset directory.
[[nodiscard]] inline Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DatasetError("dataset directory '" + dir.string() + "' not found");
  Dataset out;
  bool first = true;
  DatasetManifest manifests[2];
  for (const Split split : {Split::train, Split::test}) {
    const auto path = manifest_path(dir, split);
    if (!std::filesystem::exists(path)) throw DatasetError("missing manifest '" + path.string() + "'");
    const DatasetManifest m = read_manifest(path);
    if (m.split != split) throw DatasetError(path.string() + " declares split " + to_string(m.split));
    if (first) {
      out.spec = m.spec;
      first = false;
    } else if (!(out.spec == m.spec)) {
      throw DatasetError("train and test manifests disagree on the sensor spec");
    }
    auto& frames = split == Split::train ? out.train : out.test;
    for (const auto seed : m.seeds) {
      Frame f{seed, {}};
      for (const Resolution res : m.resolutions) f.images.emplace(res, read_range_image(image_path(dir, split, seed, res)));
      frames.push_back(std::move(f));
    }
    manifests[split == Split::train ? 0 : 1] = m;
  }
  check_disjoint(manifests[0], manifests[1]);
  return out;
}

}  // namespace iln

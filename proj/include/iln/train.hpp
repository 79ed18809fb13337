#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iln/dataset.hpp"
#include "iln/errors.hpp"
#include "iln/heads.hpp"
#include "iln/io.hpp"
#include "iln/metrics.hpp"
#include "iln/ops.hpp"
#include "iln/optim.hpp"
#include "iln/rng.hpp"

namespace iln {

struct TrainConfig {
  ModelConfig model;
  Resolution input_res{8, 128};
  Resolution train_res{32, 256};
  Resolution eval_res{32, 256};
  std::size_t batch = 16;
  std::size_t queries = 256;  ///< per image per step
  double lr = 1e-4;
  std::size_t steps = 2000;
  std::size_t eval_interval = 100;
  std::size_t eval_scenes = 0;  ///< held-out scenes used during fit, 0 = all
  std::uint64_t seed = 0;

  void validate() const {
    model.validate();
    if (train_res.rows < input_res.rows || train_res.cols < input_res.cols) {
      throw ConfigError("train resolution " + train_res.str() + " is below input resolution " + input_res.str());
    }
    if (batch == 0) throw ConfigError("batch must be at least 1");
    if (queries == 0 || queries > train_res.pixels()) {
      throw ConfigError("queries per image must be in [1, " + std::to_string(train_res.pixels()) + "]");
    }
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (eval_interval == 0) throw ConfigError("eval_interval must be at least 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

[[nodiscard]] inline KeyValues to_key_values(const TrainConfig& c) {
  KeyValues kv;
  kv["head"] = to_string(c.model.head);
  kv["channels"] = std::to_string(c.model.encoder.channels);
  kv["blocks"] = std::to_string(c.model.encoder.blocks);
  kv["kernel"] = std::to_string(c.model.encoder.kernel);
  kv["model_dim"] = std::to_string(c.model.iln.model_dim);
  kv["attn_blocks"] = std::to_string(c.model.iln.attn_blocks);
  kv["heads"] = std::to_string(c.model.iln.heads);
  kv["mlp_hidden"] = std::to_string(c.model.iln.mlp_hidden);
  kv["pos_frequencies"] = std::to_string(c.model.iln.pos_frequencies);
  kv["input_res"] = c.input_res.str();
  kv["train_res"] = c.train_res.str();
  kv["eval_res"] = c.eval_res.str();
  kv["batch"] = std::to_string(c.batch);
  kv["queries"] = std::to_string(c.queries);
  kv["lr"] = format_double(c.lr);
  kv["steps"] = std::to_string(c.steps);
  kv["eval_interval"] = std::to_string(c.eval_interval);
  kv["eval_scenes"] = std::to_string(c.eval_scenes);
  kv["seed"] = std::to_string(c.seed);
  return kv;
}

/// Overrides fields of `base` from key=value pairs; unknown keys are rejected.
[[nodiscard]] inline TrainConfig apply_key_values(TrainConfig c, const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    const auto u = [&] { return static_cast<std::size_t>(parse_uint(key, value)); };
    if (key == "head") c.model.head = parse_head(value);
    else if (key == "channels") c.model.encoder.channels = u();
    else if (key == "blocks") c.model.encoder.blocks = u();
    else if (key == "kernel") c.model.encoder.kernel = u();
    else if (key == "model_dim") c.model.iln.model_dim = u();
    else if (key == "attn_blocks") c.model.iln.attn_blocks = u();
    else if (key == "heads") c.model.iln.heads = u();
    else if (key == "mlp_hidden") c.model.iln.mlp_hidden = u();
    else if (key == "pos_frequencies") c.model.iln.pos_frequencies = u();
    else if (key == "input_res") c.input_res = Resolution::parse(value);
    else if (key == "train_res") c.train_res = Resolution::parse(value);
    else if (key == "eval_res") c.eval_res = Resolution::parse(value);
    else if (key == "batch") c.batch = u();
    else if (key == "queries") c.queries = u();
    else if (key == "lr") c.lr = parse_double(key, value);
    else if (key == "steps") c.steps = u();
    else if (key == "eval_interval") c.eval_interval = u();
    else if (key == "eval_scenes") c.eval_scenes = u();
    else if (key == "seed") c.seed = parse_uint(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

/// One optimization batch: low-resolution inputs plus high-resolution targets.
struct Batch {
  std::vector<const RangeImage*> inputs;
  std::vector<LaserQuery> queries;
  std::vector<std::size_t> image_of;
  std::vector<double> targets;  ///< meters
};

/// Draws `batch` scenes (distinct while the split allows it) and, per scene,
/// `queries` distinct pixel centers of the training-resolution grid.
[[nodiscard]] inline Batch sample_batch(const std::vector<Frame>& frames, const TrainConfig& config, Rng& rng) {
  if (frames.empty()) throw DatasetError("no training frames");
  const std::size_t pixels = config.train_res.pixels();
  if (config.queries > pixels) {
    throw ConfigError("queries per image (" + std::to_string(config.queries) + ") exceed the " +
                      config.train_res.str() + " grid");
  }
  std::vector<std::size_t> scenes;
  if (config.batch <= frames.size()) {
    scenes = rng.sample_without_replacement(frames.size(), config.batch);
  } else {
    for (std::size_t b = 0; b < config.batch; ++b) scenes.push_back(static_cast<std::size_t>(rng.below(frames.size())));
  }
  Batch out;
  for (std::size_t b = 0; b < scenes.size(); ++b) {
    const Frame& frame = frames[scenes[b]];
    const RangeImage& target = frame.at(config.train_res);
    out.inputs.push_back(&frame.at(config.input_res));
    for (const std::size_t p : rng.sample_without_replacement(pixels, config.queries)) {
      const std::size_t row = p / config.train_res.cols, col = p % config.train_res.cols;
      out.queries.push_back(pixel_center(target.spec(), target.rows(), target.cols(), row, col));
      out.image_of.push_back(b);
      out.targets.push_back(target.depths()[p]);
    }
  }
  return out;
}

/// L1 between predicted and target depths, both divided by r_max. Graph only, no update.
template <typename T>
[[nodiscard]] ad::Var<T> batch_loss(const ImplicitModel<T>& model, const Batch& batch) {
  const std::span<const RangeImage* const> imgs(batch.inputs);
  const ad::Var<T> featmap = model.encode(imgs);
  const auto prepared = model.prepare(imgs, batch.queries, batch.image_of);
  const double inv = 1.0 / batch.inputs.front()->spec().r_max;
  ad::Tensor<T> target({batch.targets.size()});
  for (std::size_t i = 0; i < batch.targets.size(); ++i) target[i] = static_cast<T>(batch.targets[i] * inv);
  return ad::l1_loss(ad::scale(model.predict(featmap, prepared), static_cast<T>(inv)), ad::constant(std::move(target)));
}

/// Forward, backward and one Adam update. Returns the loss before the update.
template <typename T>
double train_step(ImplicitModel<T>& model, const Batch& batch, ad::Adam<T>& adam) {
  auto& params = model.params().params();
  for (const auto& p : params) {
    if (p.has_grad()) throw ContractError("gradients of '" + p.name + "' were not zeroed before the step");
  }
  const ad::Var<T> loss = batch_loss(model, batch);
  const double value = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(value)) throw TrainingError("non-finite loss", static_cast<std::size_t>(adam.steps()));
  ad::backward(loss);
  adam.step(params);
  return value;
}

struct MetricRecord {
  std::size_t step = 0;
  double mae = 0.0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

using MetricLog = std::vector<MetricRecord>;

inline constexpr const char* kMetricCsvHeader = "step,mae,iou,precision,recall,f1";

[[nodiscard]] inline std::string metric_log_csv(const MetricLog& log) {
  std::string out = std::string(kMetricCsvHeader) + "\n";
  char buf[192];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.step, r.mae, r.iou, r.precision, r.recall, r.f1);
    out += buf;
  }
  return out;
}

[[nodiscard]] inline MetricLog parse_metric_log(const std::string& text, const std::string& origin = "<log>") {
  MetricLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line) || trim(line) != kMetricCsvHeader) {
    throw FormatError(origin + ": expected header '" + kMetricCsvHeader + "'", 0);
  }
  offset += line.size() + 1;
  while (std::getline(in, line)) {
    const std::size_t at = offset;
    offset += line.size() + 1;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 6) throw FormatError(origin + ": expected 6 columns in '" + line + "'", at);
    try {
      MetricRecord r;
      r.step = static_cast<std::size_t>(parse_uint("step", cells[0]));
      r.mae = parse_double("mae", cells[1]);
      r.iou = parse_double("iou", cells[2]);
      r.precision = parse_double("precision", cells[3]);
      r.recall = parse_double("recall", cells[4]);
      r.f1 = parse_double("f1", cells[5]);
      if (!log.empty() && r.step <= log.back().step) throw ConfigError("steps must increase");
      log.push_back(r);
    } catch (const ConfigError& e) {
      throw FormatError(origin + ": " + e.what(), at);
    }
  }
  return log;
}

template <typename T>
[[nodiscard]] Predictor model_predictor(const ImplicitModel<T>& model) {
  return [&model](const RangeImage& input, std::span<const LaserQuery> queries) { return model.predict(input, queries); };
}

/// Checkpoint file set: `<path>` parameters, `<path>.opt` Adam moments,
/// `<path>.cfg` training config plus the completed step count.
struct CheckpointPaths {
  std::filesystem::path params;
  [[nodiscard]] std::filesystem::path optimizer() const { return params.string() + ".opt"; }
  [[nodiscard]] std::filesystem::path config() const { return params.string() + ".cfg"; }
};

template <typename T>
void save_checkpoint(const CheckpointPaths& paths, const TrainConfig& config, ImplicitModel<T>& model,
                     ad::Adam<T>& adam) {
  auto& params = model.params().params();
  ad::write_checkpoint(paths.params, params);
  write_file(paths.optimizer(), ad::encode_checkpoint(ad::snapshot_moments(adam, params)));
  KeyValues kv = to_key_values(config);
  kv["completed_steps"] = std::to_string(adam.steps());
  write_text_file(paths.config(), format_key_values(kv));
}

/// Training config and completed step count stored next to a checkpoint.
[[nodiscard]] inline std::pair<TrainConfig, std::size_t> read_checkpoint_config(const CheckpointPaths& paths) {
  KeyValues kv = read_key_values(paths.config());
  const auto it = kv.find("completed_steps");
  if (it == kv.end()) throw FormatError(paths.config().string() + ": missing completed_steps", 0);
  const auto steps = static_cast<std::size_t>(parse_uint("completed_steps", it->second));
  kv.erase(it);
  return {apply_key_values(TrainConfig{}, kv), steps};
}

/// Model with parameters loaded from a checkpoint.
template <typename T>
[[nodiscard]] ImplicitModel<T> load_model(const CheckpointPaths& paths) {
  const auto [config, steps] = read_checkpoint_config(paths);
  (void)steps;
  ImplicitModel<T> model(config.model, config.seed);
  ad::read_checkpoint(paths.params, model.params().params());
  return model;
}

struct FitOptions {
  std::optional<CheckpointPaths> checkpoint;     ///< written when training ends
  std::optional<CheckpointPaths> resume;         ///< continue from here
  std::optional<std::filesystem::path> log_csv;  ///< metric log
  std::function<void(std::size_t step, double loss)> on_step;
  std::function<void(const MetricRecord&)> on_eval;
  std::size_t eval_workers = 1;
};

struct FitResult {
  MetricLog log;
  std::vector<double> losses;  ///< training loss per step run in this call
};

/// Trains `model` for config.steps total optimizer steps, evaluating on the
/// held-out split every eval_interval steps. The batch of step s depends only
/// on (seed, s), so a resumed run reproduces an uninterrupted one.
template <typename T>
FitResult fit(const TrainConfig& config, const Dataset& data, ImplicitModel<T>& model, ad::Adam<T>& adam,
              const FitOptions& options = {}) {
  config.validate();
  if (data.train.empty()) throw DatasetError("dataset has no training scenes");
  if (data.test.empty()) throw DatasetError("dataset has no held-out scenes");
  // fail early on missing renders
  (void)data.train.front().at(config.input_res);
  (void)data.train.front().at(config.train_res);
  (void)data.test.front().at(config.eval_res);

  if (options.resume) {
    const auto [stored, steps] = read_checkpoint_config(*options.resume);
    if (!(stored.model == config.model)) throw ConfigError("resume checkpoint has a different model config");
    ad::read_checkpoint(options.resume->params, model.params().params());
    restore_moments(adam, model.params().params(), ad::decode_checkpoint(read_file(options.resume->optimizer())));
    adam.set_steps(steps);
  }

  const std::size_t held_out =
      config.eval_scenes == 0 ? data.test.size() : std::min(config.eval_scenes, data.test.size());
  const std::span<const Frame> eval_frames(data.test.data(), held_out);
  const Predictor predictor = model_predictor(model);

  FitResult result;
  for (std::size_t step = adam.steps(); step < config.steps; ++step) {
    Rng rng = Rng::stream(config.seed, step);
    const Batch batch = sample_batch(data.train, config, rng);
    const double loss = train_step(model, batch, adam);
    result.losses.push_back(loss);
    if (options.on_step) options.on_step(step + 1, loss);
    if ((step + 1) % config.eval_interval == 0) {
      const EvalReport r = evaluate(predictor, eval_frames, config.input_res, config.eval_res, "", options.eval_workers);
      const MetricRecord rec{step + 1, r.mae, r.iou, r.precision, r.recall, r.f1};
      result.log.push_back(rec);
      if (options.on_eval) options.on_eval(rec);
    }
  }
  if (options.checkpoint) save_checkpoint(*options.checkpoint, config, model, adam);
  if (options.log_csv) write_text_file(*options.log_csv, metric_log_csv(result.log));
  return result;
}

}  // namespace iln

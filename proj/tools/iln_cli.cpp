// iln: dataset generation, training, inference, evaluation and plotting for
// implicit range-image super-resolution.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "iln/iln.hpp"

namespace fs = std::filesystem;
using namespace iln;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

void print_config(const std::string& command, const KeyValues& kv) {
  std::cout << "# " << command << " resolved config\n" << format_key_values(kv) << std::flush;
}

std::vector<Resolution> parse_resolutions(const std::string& text) {
  std::vector<Resolution> out;
  for (const auto& part : split(text, ',')) out.push_back(Resolution::parse(trim(part)));
  if (out.empty()) throw ConfigError("empty resolution list");
  return out;
}

std::string join_resolutions(const std::vector<Resolution>& rs) {
  std::string out;
  for (const auto& r : rs) out += (out.empty() ? "" : ",") + r.str();
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& part : split(text, ',')) out.push_back(static_cast<std::size_t>(parse_uint("list", trim(part))));
  return out;
}

TrainConfig resolve_train_config(const std::string& config_file, const std::vector<std::string>& overrides,
                                 const std::string& head) {
  KeyValues kv;
  if (!config_file.empty()) {
    try {
      kv = read_key_values(config_file);
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    kv[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
  if (!head.empty()) kv["head"] = head;
  return apply_key_values(TrainConfig{}, kv);
}

void report_progress(const MetricRecord& r) {
  std::printf("step %zu  mae %.4f  iou %.4f  precision %.4f  recall %.4f  f1 %.4f\n", r.step, r.mae, r.iou,
              r.precision, r.recall, r.f1);
  std::fflush(stdout);
}

// ---- gen

struct GenArgs {
  std::string out;
  std::size_t scenes = 220;
  std::uint64_t seed = 0;
  std::string resolutions = "8x128,32x256,64x512,128x1024";
  double test_fraction = 0.1;
};

void run_gen(const GenArgs& a) {
  if (a.scenes < 2) throw ConfigError("--scenes must be at least 2 (one scene is held out)");
  if (!(a.test_fraction > 0.0 && a.test_fraction < 1.0)) throw ConfigError("--test-fraction must be in (0, 1)");
  const auto resolutions = parse_resolutions(a.resolutions);
  const auto test = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(a.test_fraction * a.scenes)), 1,
                                            a.scenes - 1);
  print_config("gen", {{"out", a.out},
                       {"scenes", std::to_string(a.scenes)},
                       {"test_scenes", std::to_string(test)},
                       {"seed", std::to_string(a.seed)},
                       {"resolutions", join_resolutions(resolutions)},
                       {"threads", std::to_string(worker_count())}});
  const auto [train_m, test_m] = make_split_manifests(a.seed, a.scenes, test, SensorSpec{}, resolutions);
  write_dataset(train_m, a.out);
  write_dataset(test_m, a.out);
  std::printf("wrote %zu images under %s\n", a.scenes * resolutions.size(), a.out.c_str());
}

// ---- train

struct TrainArgs {
  std::string data;
  std::string head;
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string log;
  std::string resume;
};

void run_train(const TrainArgs& a) {
  const TrainConfig config = resolve_train_config(a.config, a.overrides, a.head);
  const std::string log = a.log.empty() ? a.out + ".csv" : a.log;
  KeyValues shown = to_key_values(config);
  shown["data"] = a.data;
  shown["out"] = a.out;
  shown["log"] = log;
  if (!a.resume.empty()) shown["resume"] = a.resume;
  shown["threads"] = std::to_string(worker_count());
  print_config("train", shown);

  const Dataset data = load_dataset(a.data);
  ImplicitModel<float> model(config.model, config.seed);
  ad::Adam<float> adam(ad::AdamConfig{config.lr});
  FitOptions options;
  options.checkpoint = CheckpointPaths{a.out};
  if (!a.resume.empty()) options.resume = CheckpointPaths{a.resume};
  options.log_csv = log;
  options.on_eval = report_progress;
  options.eval_workers = worker_count();
  fit(config, data, model, adam, options);
  std::printf("wrote %s and %s\n", a.out.c_str(), log.c_str());
}

// ---- infer

struct InferArgs {
  std::string ckpt;
  std::string input;
  std::string res;
  std::string out;
  std::string ply;
};

void run_infer(const InferArgs& a) {
  const Resolution res = Resolution::parse(a.res);
  print_config("infer", {{"ckpt", a.ckpt}, {"input", a.input}, {"res", res.str()}, {"out", a.out}, {"ply", a.ply}});
  const ImplicitModel<float> model = load_model<float>(CheckpointPaths{a.ckpt});
  const RangeImage input = read_range_image(a.input);
  const auto queries = query_grid(input.spec(), res.rows, res.cols);
  const RangeImage pred = prediction_image(input.spec(), res, model.predict(input, queries));
  if (fs::path(a.out).extension() == ".ply") {
    write_text_file(a.out, encode_ply(to_points(pred)));
  } else {
    write_range_image(a.out, pred);
  }
  if (!a.ply.empty()) write_text_file(a.ply, encode_ply(to_points(pred)));
  std::printf("%s -> %s (%s)\n", input.resolution().str().c_str(), res.str().c_str(), a.out.c_str());
}

// ---- eval

struct EvalArgs {
  std::string data;
  std::vector<std::string> ckpts;
  std::string res = "32x256";
  std::string input_res;
  std::string baselines = "bilinear";
  std::string liif_ckpt;
  std::string out;
};

void run_eval(const EvalArgs& a) {
  const auto resolutions = parse_resolutions(a.res);
  std::vector<std::string> baselines;
  for (const auto& b : split(a.baselines, ',')) {
    const std::string name = trim(b);
    if (name.empty()) continue;
    if (name != "bilinear" && name != "gt" && name != "liif") {
      throw ConfigError("unknown baseline '" + name + "' (expected bilinear, gt or liif)");
    }
    if (name == "liif" && a.liif_ckpt.empty()) throw ConfigError("baseline liif needs --liif-ckpt");
    baselines.push_back(name);
  }

  struct Method {
    std::string name;
    Resolution input;
    std::optional<ImplicitModel<float>> model;
  };
  std::vector<Method> methods;
  for (const auto& c : a.ckpts) {
    ImplicitModel<float> m = load_model<float>(CheckpointPaths{c});
    const auto [config, steps] = read_checkpoint_config(CheckpointPaths{c});
    (void)steps;
    const std::string name = a.ckpts.size() == 1 ? to_string(config.model.head) : fs::path(c).stem().string();
    methods.push_back({name, config.input_res, std::move(m)});
  }
  Resolution base_input{8, 128};
  if (!a.input_res.empty()) {
    base_input = Resolution::parse(a.input_res);
  } else if (!methods.empty()) {
    base_input = methods.front().input;
  }
  for (const auto& b : baselines) {
    if (b == "liif") {
      ImplicitModel<float> m = load_model<float>(CheckpointPaths{a.liif_ckpt});
      if (m.config().head != HeadKind::liif) throw ConfigError(a.liif_ckpt + " is not a liif checkpoint");
      const auto [config, steps] = read_checkpoint_config(CheckpointPaths{a.liif_ckpt});
      (void)steps;
      methods.push_back({"liif", config.input_res, std::move(m)});
    } else {
      methods.push_back({b, base_input, std::nullopt});
    }
  }
  if (methods.empty()) throw ConfigError("nothing to evaluate: pass --ckpt or --baselines");

  KeyValues shown{{"data", a.data}, {"res", join_resolutions(resolutions)}, {"input_res", base_input.str()},
                  {"baselines", a.baselines}, {"threads", std::to_string(worker_count())}};
  for (std::size_t i = 0; i < a.ckpts.size(); ++i) shown["ckpt" + std::to_string(i)] = a.ckpts[i];
  if (!a.liif_ckpt.empty()) shown["liif_ckpt"] = a.liif_ckpt;
  if (!a.out.empty()) shown["out"] = a.out;
  print_config("eval", shown);

  const Dataset data = load_dataset(a.data);
  std::string csv = std::string(kEvalCsvHeader) + "\n";
  std::cout << kEvalCsvHeader << "\n";
  for (const auto& m : methods) {
    Predictor predictor;
    Resolution input = m.input;
    if (m.model) {
      predictor = model_predictor(*m.model);
    } else if (m.name == "bilinear") {
      predictor = bilinear_predictor();
    }
    for (const Resolution res : resolutions) {
      EvalReport r;
      if (m.name == "gt") {
        // ground truth against itself: the predictor reads the target render
        input = res;
        predictor = [](const RangeImage& img, std::span<const LaserQuery> qs) {
          std::vector<double> out;
          out.reserve(qs.size());
          for (const auto& q : qs) out.push_back(bilinear_predict(img, q));
          return out;
        };
      }
      r = evaluate(predictor, data.test, input, res, m.name, worker_count());
      const std::string row = to_csv_row(r);
      csv += row + "\n";
      std::cout << row << "\n" << std::flush;
    }
  }
  if (!a.out.empty()) write_text_file(a.out, csv);
}

// ---- ablate

struct AblateArgs {
  std::string data;
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string depths = "0,1,2,4";
};

void run_ablate(const AblateArgs& a) {
  const TrainConfig base = resolve_train_config(a.config, a.overrides, "iln");
  const auto depths = parse_sizes(a.depths);
  KeyValues shown = to_key_values(base);
  shown.erase("attn_blocks");
  shown["depths"] = a.depths;
  shown["data"] = a.data;
  shown["out"] = a.out;
  shown["threads"] = std::to_string(worker_count());
  print_config("ablate", shown);

  const Dataset data = load_dataset(a.data);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create '" + a.out + "': " + ec.message());
  const std::span<const Frame> held_out(data.test);
  std::string csv = "attn_blocks,mae,iou,precision,recall,f1\n";
  Series mae_series{"iln", {}};
  for (const std::size_t d : depths) {
    TrainConfig config = base;
    config.model.iln.attn_blocks = d;
    config.validate();
    const std::string stem = (fs::path(a.out) / ("iln_D" + std::to_string(d))).string();
    ImplicitModel<float> model(config.model, config.seed);
    ad::Adam<float> adam(ad::AdamConfig{config.lr});
    FitOptions options;
    options.checkpoint = CheckpointPaths{stem + ".ckpt"};
    options.log_csv = stem + ".csv";
    options.eval_workers = worker_count();
    std::printf("training D=%zu\n", d);
    fit(config, data, model, adam, options);
    const EvalReport r = evaluate(model_predictor(model), held_out, config.input_res, config.eval_res,
                                  "D" + std::to_string(d), worker_count());
    char buf[192];
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", d, r.mae, r.iou, r.precision, r.recall, r.f1);
    csv += buf;
    std::fputs(buf, stdout);
    mae_series.points.emplace_back(static_cast<double>(d), r.mae);
  }
  write_text_file(fs::path(a.out) / "ablation.csv", csv);
  write_text_file(fs::path(a.out) / "ablation.svg",
                  line_chart_svg({mae_series}, "Test MAE by attention blocks", "attention blocks", "MAE [m]"));
}

// ---- plot

struct PlotArgs {
  std::vector<std::string> logs;
  std::string metric = "mae";
  std::string out;
  std::string title;
};

void run_plot(const PlotArgs& a) {
  static const std::vector<std::string> kMetrics = {"mae", "iou", "precision", "recall", "f1"};
  if (std::find(kMetrics.begin(), kMetrics.end(), a.metric) == kMetrics.end()) {
    throw ConfigError("unknown metric '" + a.metric + "'");
  }
  std::string logs;
  for (const auto& l : a.logs) logs += (logs.empty() ? "" : ",") + l;
  print_config("plot", {{"log", logs}, {"metric", a.metric}, {"out", a.out}});
  std::vector<Series> series;
  for (const auto& path : a.logs) {
    const auto bytes = read_file(path);
    const MetricLog log = parse_metric_log(std::string(bytes.begin(), bytes.end()), path);
    Series s{fs::path(path).stem().string(), {}};
    for (const auto& r : log) {
      const double v = a.metric == "mae"         ? r.mae
                       : a.metric == "iou"       ? r.iou
                       : a.metric == "precision" ? r.precision
                       : a.metric == "recall"    ? r.recall
                                                 : r.f1;
      s.points.emplace_back(static_cast<double>(r.step), v);
    }
    if (s.points.empty()) throw FormatError(path + ": log has no rows", 0);
    series.push_back(std::move(s));
  }
  const std::string title = a.title.empty() ? a.metric + " vs step" : a.title;
  write_text_file(a.out, line_chart_svg(series, title, "step", a.metric));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit range-image super-resolution"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "iln 1.0");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Render a procedural dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--scenes", gen.scenes, "Total scenes (train + test)")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "First scene seed")->capture_default_str();
  gen_cmd->add_option("--resolutions", gen.resolutions, "Comma-separated HxW list")->capture_default_str();
  gen_cmd->add_option("--test-fraction", gen.test_fraction, "Share of scenes held out")->capture_default_str();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", train.data, "Dataset directory")->required();
  train_cmd->add_option("--head", train.head, "iln or liif");
  train_cmd->add_option("--config", train.config, "key=value config file");
  train_cmd->add_option("--set", train.overrides, "Config override key=value (repeatable)");
  train_cmd->add_option("--out", train.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train.log, "Metric log CSV (default <out>.csv)");
  train_cmd->add_option("--resume", train.resume, "Checkpoint to continue from");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Upsample one range image");
  infer_cmd->add_option("--ckpt", infer.ckpt, "Checkpoint")->required();
  infer_cmd->add_option("--input", infer.input, "Input range image (.ilnr)")->required();
  infer_cmd->add_option("--res", infer.res, "Output resolution HxW")->required();
  infer_cmd->add_option("--out", infer.out, "Output .ilnr image or .ply point cloud")->required();
  infer_cmd->add_option("--ply", infer.ply, "Also write the point cloud as ASCII PLY");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Compare methods on the test split");
  eval_cmd->add_option("--data", eval.data, "Dataset directory")->required();
  eval_cmd->add_option("--ckpt", eval.ckpts, "Checkpoint (repeatable)");
  eval_cmd->add_option("--res", eval.res, "Comma-separated test resolutions")->capture_default_str();
  eval_cmd->add_option("--input-res", eval.input_res, "Input resolution for baselines");
  eval_cmd->add_option("--baselines", eval.baselines, "Comma-separated: bilinear, gt, liif")->capture_default_str();
  eval_cmd->add_option("--liif-ckpt", eval.liif_ckpt, "Checkpoint of the liif baseline");
  eval_cmd->add_option("--out", eval.out, "Comparison CSV");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep the number of attention blocks");
  ablate_cmd->add_option("--data", ablate.data, "Dataset directory")->required();
  ablate_cmd->add_option("--config", ablate.config, "key=value config file");
  ablate_cmd->add_option("--set", ablate.overrides, "Config override key=value (repeatable)");
  ablate_cmd->add_option("--out", ablate.out, "Output directory")->required();
  ablate_cmd->add_option("--depths", ablate.depths, "Comma-separated block counts")->capture_default_str();

  PlotArgs plot;
  auto* plot_cmd = app.add_subcommand("plot", "Draw metric logs as an SVG line chart");
  plot_cmd->add_option("--log", plot.logs, "Metric log CSV (repeatable)")->required();
  plot_cmd->add_option("--metric", plot.metric, "mae, iou, precision, recall or f1")->capture_default_str();
  plot_cmd->add_option("--out", plot.out, "Output SVG")->required();
  plot_cmd->add_option("--title", plot.title, "Chart title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) run_gen(gen);
    if (*train_cmd) run_train(train);
    if (*infer_cmd) run_infer(infer);
    if (*eval_cmd) run_eval(eval);
    if (*ablate_cmd) run_ablate(ablate);
    if (*plot_cmd) run_plot(plot);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}

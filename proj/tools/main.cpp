// dgcnn: train / eval / verify / bench / export-distances for the EdgeConv
// point-cloud models.  Exit codes: 0 ok, 1 verification failure, 2 usage or
// config error, 3 checkpoint/data mismatch, 4 numeric failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "dgcnn/bench.hpp"
#include "dgcnn/checkpoint.hpp"
#include "dgcnn/graph.hpp"
#include "dgcnn/run_config.hpp"
#include "dgcnn/runtime.hpp"
#include "dgcnn/settings.hpp"
#include "dgcnn/verify.hpp"

namespace fs = std::filesystem;
using namespace dgcnn;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool strict = false;
  std::vector<std::string> overrides;
};

RunSpec resolve_spec(const CommonArgs& args, Json* resolved_out = nullptr) {
  Json config = args.config_path.empty() ? default_config_json() : load_config_file(args.config_path);
  apply_overrides(config, args.overrides);
  if (args.seed_set) config["seed"] = args.seed;
  RunSpec spec = parse_run_spec(config);
  if (resolved_out) *resolved_out = run_spec_to_json(spec);
  return spec;
}

std::string config_dir(const CommonArgs& args) {
  return args.config_path.empty() ? std::string() : fs::path(args.config_path).parent_path().string();
}

void write_run_snapshot(const std::string& out_dir, const RunSpec& spec) {
  fs::create_directories(out_dir);
  write_config_snapshot(out_dir + "/config.json", run_spec_to_json(spec));
}

std::vector<std::vector<Index>> synth_part_sets(const SegmenterConfig& cfg, const Dataset& data) {
  // one part set per category; the synthetic sets use the full label range
  Index num_categories = 1;
  for (const auto& c : data.clouds) num_categories = std::max(num_categories, c.category.value_or(0) + 1);
  std::vector<Index> all_parts;
  for (Index p = 0; p < cfg.num_part_labels; ++p) all_parts.push_back(p);
  return std::vector<std::vector<Index>>(static_cast<std::size_t>(num_categories), all_parts);
}

template <typename S>
int run_train(const RunSpec& spec, const CommonArgs& args) {
  LoadedData data = load_data(spec, config_dir(args));
  TrainOptions opt = spec.train;
  opt.out_dir = args.out_dir;
  std::uint64_t init_seed = spec.init_seed ? spec.init_seed : splitmix64(spec.seed ^ 0xdecaf000ull);
  Rng init(init_seed);

  if (spec.task == "segmentation") {
    auto params = init_segmenter<S>(spec.segmenter, init);
    auto result = fit_segmenter(params, spec.segmenter, data.train, &data.test,
                                synth_part_sets(spec.segmenter, data.train), opt);
    if (result.has_final_eval)
      std::printf("final: point accuracy %.6f, mIoU %.6f\n", result.final_eval.overall_accuracy,
                  result.final_eval.miou);
  } else {
    auto params = init_classifier<S>(spec.classifier, init);
    auto result = fit_classifier(params, spec.classifier, data.train, &data.test, opt);
    if (result.has_final_eval)
      std::printf("final: overall accuracy %.6f, mean-class accuracy %.6f\n", result.final_eval.overall_accuracy,
                  result.final_eval.mean_class_accuracy);
  }
  std::printf("artifacts written to %s\n", args.out_dir.c_str());
  return 0;
}

template <typename S>
int run_eval(const RunSpec& spec, const CommonArgs& args, const std::string& checkpoint, double keep_fraction,
             const std::string& side) {
  LoadedData data = load_data(spec, config_dir(args));
  const auto& clouds = data.test.clouds.empty() ? data.train.clouds : data.test.clouds;
  std::uint64_t init_seed = spec.init_seed ? spec.init_seed : splitmix64(spec.seed ^ 0xdecaf000ull);
  Rng init(init_seed);

  MetricsReport report;
  bool segmentation = spec.task == "segmentation";
  if (segmentation) {
    auto params = init_segmenter<S>(spec.segmenter, init);
    load_checkpoint<S>(checkpoint, params);
    if (keep_fraction < 1.0 || !side.empty())
      throw ParameterError("eval: --keep-fraction/--side-drop apply to classification runs");
    report = evaluate_segmenter(params, spec.segmenter, clouds, synth_part_sets(spec.segmenter, data.test));
    std::printf("point accuracy %.6f\nmIoU %.6f\n", report.overall_accuracy, report.miou);
  } else {
    auto params = init_classifier<S>(spec.classifier, init);
    load_checkpoint<S>(checkpoint, params);
    if (!side.empty()) {
      report = side_drop_eval(params, spec.classifier, clouds, keep_fraction, parse_drop_side(side));
    } else if (keep_fraction < 1.0) {
      Rng rng(Rng(spec.seed).fork(17).seed());
      report = random_dropout_eval(params, spec.classifier, clouds, keep_fraction, rng);
    } else {
      report = evaluate_classifier(params, spec.classifier, clouds);
    }
    std::printf("overall accuracy %.6f\nmean-class accuracy %.6f\n", report.overall_accuracy,
                report.mean_class_accuracy);
  }
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    std::ofstream out(args.out_dir + "/eval.csv");
    write_metrics_csv(out, report, segmentation);
    write_run_snapshot(args.out_dir, spec);
  }
  return 0;
}

template <typename S>
int run_export(const RunSpec& spec, const CommonArgs& args, const std::string& checkpoint, Index cloud_index,
               Index source_index, const std::string& layer) {
  if (spec.task != "classification") throw ParameterError("export-distances: classification checkpoints only");
  LoadedData data = load_data(spec, config_dir(args));
  const auto& clouds = data.test.clouds.empty() ? data.train.clouds : data.test.clouds;
  if (cloud_index < 0 || cloud_index >= static_cast<Index>(clouds.size()))
    throw ParameterError("export-distances: cloud index out of range");
  std::uint64_t init_seed = spec.init_seed ? spec.init_seed : splitmix64(spec.seed ^ 0xdecaf000ull);
  Rng init(init_seed);
  auto params = init_classifier<S>(spec.classifier, init);
  load_checkpoint<S>(checkpoint, params);

  const Points& cloud = clouds[static_cast<std::size_t>(cloud_index)].points;
  auto distances = export_feature_distances(params, spec.classifier, cloud, source_index, layer);
  if (args.out_dir.empty()) {
    write_distance_csv(std::cout, cloud, distances);
  } else {
    fs::create_directories(args.out_dir);
    std::ofstream out(args.out_dir + "/distances.csv");
    write_distance_csv(out, cloud, distances);
    std::printf("wrote %s/distances.csv\n", args.out_dir.c_str());
  }
  return 0;
}

int dispatch_exit(const std::exception& e) {
  if (dynamic_cast<const CheckpointError*>(&e)) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 3;
  }
  if (dynamic_cast<const NumericError*>(&e)) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  }
  std::fprintf(stderr, "error: %s\n", e.what());
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"EdgeConv / dynamic-graph point-cloud networks"};
  app.require_subcommand(1);

  CommonArgs args;
  app.add_option("--config", args.config_path, "JSON config file");
  app.add_option("--seed", args.seed, "run seed (overrides config)")->each([&](const std::string&) {
    args.seed_set = true;
  });
  app.add_option("--out", args.out_dir, "output directory");
  app.add_flag("--strict-deterministic", args.strict, "bitwise-reproducible kernels");

  std::string checkpoint, side, layer = "input", filter;
  double keep_fraction = 1.0;
  Index cloud_index = 0, source_index = 0;
  bool inject_knn_fault = false;
  std::vector<Index> bench_n{256, 1024};
  std::vector<Index> bench_k{10, 20};
  int bench_reps = 20;

  auto* cmd_train = app.add_subcommand("train", "train a model and write metrics + checkpoints");
  cmd_train->add_option("overrides", args.overrides, "dotted-key=value config overrides");

  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  cmd_eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  cmd_eval->add_option("--keep-fraction", keep_fraction, "random input dropout before evaluation");
  cmd_eval->add_option("--side-drop", side, "drop points from one side (top|bottom|left|right|front|back)");
  cmd_eval->add_option("overrides", args.overrides, "dotted-key=value config overrides");

  auto* cmd_verify = app.add_subcommand("verify", "run the property-verification suite");
  cmd_verify->add_option("--filter", filter, "run only families whose name contains this substring");
  cmd_verify->add_flag("--inject-knn-tie-fault", inject_knn_fault,
                       "test hook: flip the k-NN tie rule (the oracle check must then fail)");

  auto* cmd_bench = app.add_subcommand("bench", "time graph construction and forward passes");
  cmd_bench->add_option("--n", bench_n, "point counts");
  cmd_bench->add_option("--k", bench_k, "neighbor counts");
  cmd_bench->add_option("--reps", bench_reps, "repetitions per cell");

  auto* cmd_export = app.add_subcommand("export-distances", "feature-space distances from one point to all others");
  cmd_export->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  cmd_export->add_option("--cloud-index", cloud_index, "which test cloud");
  cmd_export->add_option("--source-index", source_index, "source point index");
  cmd_export->add_option("--layer", layer, "feature space: input, transform, or edgeconvL");
  cmd_export->add_option("overrides", args.overrides, "dotted-key=value config overrides");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // usage errors are exit 2
  }
  set_strict_deterministic(args.strict);
  knn_tie_fault_hook() = inject_knn_fault;

  try {
    if (cmd_verify->parsed()) {
      auto results = run_verification(filter);
      if (results.empty()) {
        std::fprintf(stderr, "no verification family matches '%s'\n", filter.c_str());
        return 2;
      }
      for (const auto& r : results)
        std::printf("%-26s %s  (%.1fs) %s\n", r.family.c_str(), r.passed ? "PASS" : "FAIL", r.seconds,
                    r.detail.c_str());
      if (!all_passed(results)) {
        std::printf("verification FAILED\n");
        return 1;
      }
      std::printf("verification passed\n");
      return 0;
    }

    if (cmd_bench->parsed()) {
      auto rows = run_bench(bench_n, bench_k, bench_reps);
      if (args.out_dir.empty()) {
        write_bench_csv(std::cout, rows);
      } else {
        fs::create_directories(args.out_dir);
        std::ofstream out(args.out_dir + "/bench.csv");
        write_bench_csv(out, rows);
        std::printf("wrote %s/bench.csv\n", args.out_dir.c_str());
      }
      return 0;
    }

    RunSpec spec = resolve_spec(args);
    if (cmd_train->parsed()) {
      if (args.out_dir.empty()) throw ParameterError("train: --out is required");
      write_run_snapshot(args.out_dir, spec);
      std::ofstream(args.out_dir + "/seed.txt") << spec.seed << "\n";
      return spec.precision == "f32" ? run_train<float>(spec, args) : run_train<double>(spec, args);
    }
    if (cmd_eval->parsed())
      return spec.precision == "f32" ? run_eval<float>(spec, args, checkpoint, keep_fraction, side)
                                     : run_eval<double>(spec, args, checkpoint, keep_fraction, side);
    if (cmd_export->parsed())
      return spec.precision == "f32" ? run_export<float>(spec, args, checkpoint, cloud_index, source_index, layer)
                                     : run_export<double>(spec, args, checkpoint, cloud_index, source_index, layer);
  } catch (const std::exception& e) {
    return dispatch_exit(e);
  }
  return 2;
}

#pragma once

#include <nlohmann/json_fwd.hpp>
#include <string>

#include "dgcnn/config.hpp"
#include "dgcnn/data.hpp"
#include "dgcnn/models.hpp"
#include "dgcnn/train_loop.hpp"

namespace dgcnn {

/// A fully resolved run: everything the train/eval commands need, parsed
/// from the JSON config plus command-line overrides.
struct RunSpec {
  std::string task = "classification";  // or "segmentation"
  std::string precision = "f64";        // or "f32"
  ClassifierConfig classifier;
  SegmenterConfig segmenter;
  std::string data_kind = "synth";  // or "manifest"
  SynthSpec synth;
  std::uint64_t data_seed = 2026;
  std::string manifest_path;
  TrainOptions train;
  std::uint64_t seed = 1;
  std::uint64_t init_seed = 0;  // 0: derived from seed
};

Json default_config_json();
RunSpec parse_run_spec(const Json& config);
Json run_spec_to_json(const RunSpec& spec);

struct LoadedData {
  Dataset train, val, test;
};

/// Builds the dataset named by the spec (synthetic generation or a manifest
/// of point files).
LoadedData load_data(const RunSpec& spec, const std::string& config_dir);

/// Manifest format: {"classes": [...], "clouds": [{"file","label","split"}]},
/// paths relative to the manifest location.
LoadedData load_manifest(const std::string& path);

}  // namespace dgcnn
